"""Median-with-IQR loss curves rendered to deterministic SVG."""

from __future__ import annotations

import math
import re
import xml.etree.ElementTree as ET
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .results import ResultsTable  # noqa: E402

STYLE = {
    "svg.hashsalt": "teleport-l2o",
    "svg.fonttype": "path",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.4,
    "legend.frameon": False,
}
COLORS = ("#0072b2", "#d55e00", "#009e73", "#cc79a7", "#e69f00", "#56b4e9", "#000000")


def _positive(y: np.ndarray) -> np.ndarray:
    # log axes cannot show f <= 0; drop those points instead of clamping
    y = np.asarray(y, dtype=np.float64)
    return np.where((y > 0) & np.isfinite(y), y, np.nan)


def draw_table(ax, table: ResultsTable, title: str = "") -> None:
    steps = np.arange(table.steps + 1)
    drawn = False
    for i, opt in enumerate(table.optimizers):
        agg = table.aggregate(opt)
        med = _positive(agg.median)
        if not np.any(np.isfinite(med)):
            continue
        color = COLORS[i % len(COLORS)]
        rate = table.divergence_rate(opt)
        label = opt if not rate else f"{opt} (div {rate:.0%})"
        ax.plot(steps, med, color=color, label=label)
        lo, hi = _positive(agg.q25), _positive(agg.q75)
        ok = np.isfinite(lo) & np.isfinite(hi)
        if ok.any():
            ax.fill_between(steps, np.where(ok, lo, np.nan), np.where(ok, hi, np.nan), color=color, alpha=0.2, linewidth=0)
        drawn = True
    if drawn:
        ax.set_yscale("log")
        ax.legend(fontsize=7)
    ax.set_xlabel("step")
    ax.set_ylabel("f (median, IQR band)")
    if title:
        ax.set_title(title)


def _save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def plot_table(table: ResultsTable, path, title: str = "") -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 3.5), layout="constrained")
        draw_table(ax, table, title)
        return _save(fig, path)


def plot_panels(tables: dict, path) -> Path:
    """One axis per named table, laid out on a grid with two columns."""
    n = len(tables)
    cols = 2 if n > 1 else 1
    rows = math.ceil(n / cols)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(rows, cols, figsize=(5.0 * cols, 3.5 * rows), layout="constrained", squeeze=False)
        for ax, (name, table) in zip(axes.flat, tables.items()):
            draw_table(ax, table, name)
        for ax in list(axes.flat)[n:]:
            ax.set_visible(False)
        return _save(fig, path)


def plot_curve(values, path, ylabel: str, title: str = "", log: bool = True) -> Path:
    """A single series against its index (e.g. meta-loss per training run)."""
    y = np.asarray(values, dtype=np.float64)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 3.5), layout="constrained")
        ax.plot(np.arange(len(y)), _positive(y) if log else y, color=COLORS[0])
        if log and np.any(_positive(y) > 0):
            ax.set_yscale("log")
        ax.set_xlabel("index")
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        return _save(fig, path)


_GEOMETRY_ATTRS = ("d", "x", "y", "x1", "y1", "x2", "y2", "cx", "cy", "r", "width", "height", "points", "transform", "viewBox")
_BAD_NUMBER = re.compile(r"(?i)(?<![a-z])(nan|inf)(?![a-z])")


def check_svg(path) -> None:
    """Raise ``ValueError`` unless the file parses as SVG with finite coordinates."""
    root = ET.parse(path).getroot()
    if not root.tag.endswith("svg"):
        raise ValueError(f"{path}: root element is {root.tag!r}, not svg")
    for el in root.iter():
        for name in _GEOMETRY_ATTRS:
            value = el.get(name)
            if value and _BAD_NUMBER.search(value):
                raise ValueError(f"{path}: non-finite {name!r} on <{el.tag}>")
