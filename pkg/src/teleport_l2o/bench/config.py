"""Experiment configuration: one suite per task distribution, loaded from JSON."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..meta import L2OConfig
from ..meta.l2o import ConfigError, VARIANTS
from ..tasks import TaskDistribution

OUTPUT_ENV = "TELEPORT_L2O_OUT"

# allowed keys per optimizer kind (besides "name" and "label")
_OPTIMIZER_KEYS = {
    "gd": {"alpha"},
    "momentum": {"alpha", "beta"},
    "newton": set(),
    "teleport_gd": {"alpha", "teleport_every", "teleport_steps", "grid_n", "refine_iters"},
    "l2o": {"variant", "train", "checkpoint"},
}
_SUITE_KEYS = {"name", "distribution", "optimizers", "seeds", "steps", "output_dir", "plots", "workers"}


@dataclass
class OptimizerSpec:
    kind: str
    label: str
    params: dict = field(default_factory=dict)
    train: Optional[L2OConfig] = None
    checkpoint: Optional[Path] = None

    @property
    def is_l2o(self) -> bool:
        return self.kind == "l2o"

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path) -> "OptimizerSpec":
        if not isinstance(d, dict) or "name" not in d:
            raise ConfigError("each optimizer needs a 'name'")
        kind = d["name"]
        if kind not in _OPTIMIZER_KEYS:
            raise ConfigError(f"unknown optimizer {kind!r}; choose from {sorted(_OPTIMIZER_KEYS)}")
        extra = set(d) - _OPTIMIZER_KEYS[kind] - {"name", "label"}
        if extra:
            raise ConfigError(f"unknown keys for {kind}: {sorted(extra)}")
        params = {k: v for k, v in d.items() if k not in ("name", "label", "train", "checkpoint")}
        if kind != "l2o":
            return cls(kind, d.get("label", kind), params)

        variant = d.get("variant", "vanilla")
        if variant not in VARIANTS:
            raise ConfigError(f"unknown L2O variant {variant!r}")
        train = None
        if "train" in d:
            tdict = dict(d["train"])
            if tdict.setdefault("variant", variant) != variant:
                raise ConfigError("train.variant disagrees with the optimizer variant")
            train = L2OConfig.from_dict(tdict)
        ckpt = None
        if d.get("checkpoint"):
            ckpt = Path(d["checkpoint"])
            if not ckpt.is_absolute():
                ckpt = base_dir / ckpt
        if train is None and (ckpt is None or not ckpt.exists()):
            raise ConfigError(f"L2O {variant}: checkpoint missing and no training requested")
        return cls(kind, d.get("label", f"l2o_{variant}"), params, train, ckpt)


@dataclass
class ExperimentConfig:
    name: str
    distribution: TaskDistribution
    optimizers: list
    seeds: list
    steps: int
    output_dir: Path = Path("runs")
    plots: bool = True
    workers: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.name or any(c in self.name for c in "/\\"):
            raise ConfigError("suite name must be a plain, non-empty string")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if any(not isinstance(s, int) or isinstance(s, bool) or s < 0 for s in self.seeds):
            raise ConfigError("seeds must be non-negative integers")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be unique")
        if not isinstance(self.steps, int) or self.steps < 1:
            raise ConfigError("steps must be a positive integer")
        if not self.optimizers:
            raise ConfigError("at least one optimizer is required")
        labels = [o.label for o in self.optimizers]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"optimizer labels must be unique: {labels}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | str = ".", defaults: dict | None = None) -> "ExperimentConfig":
        d = {**(defaults or {}), **d}
        extra = set(d) - _SUITE_KEYS
        if extra:
            raise ConfigError(f"unknown suite keys: {sorted(extra)}")
        for key in ("name", "distribution", "optimizers", "seeds", "steps"):
            if key not in d:
                raise ConfigError(f"suite is missing {key!r}")
        base_dir = Path(base_dir)
        try:
            dist = TaskDistribution.from_dict(d["distribution"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad distribution: {exc}") from None
        opts = [OptimizerSpec.from_dict(o, base_dir) for o in d["optimizers"]]
        out = Path(os.environ.get(OUTPUT_ENV) or d.get("output_dir", "runs"))
        return cls(
            name=str(d["name"]),
            distribution=dist,
            optimizers=opts,
            seeds=list(d["seeds"]),
            steps=d["steps"],
            output_dir=out,
            plots=bool(d.get("plots", True)),
            workers=int(d.get("workers", 1)),
        )


def load_suites(path) -> list[ExperimentConfig]:
    """Read a suite file: either one suite object or ``{"suites": [...], ...}``.

    Keys next to ``"suites"`` act as defaults for every suite.  Raises
    ``FileNotFoundError`` for a missing file and ``ConfigError`` otherwise.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    base = path.parent
    if "suites" in raw:
        defaults = {k: v for k, v in raw.items() if k != "suites"}
        suites = [ExperimentConfig.from_dict(s, base, defaults) for s in raw["suites"]]
        names = [s.name for s in suites]
        if len(set(names)) != len(names):
            raise ConfigError("suite names must be unique")
        return suites
    return [ExperimentConfig.from_dict(raw, base)]
