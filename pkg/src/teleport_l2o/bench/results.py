"""Per-run loss curves, cross-seed aggregates and their CSV/JSON forms."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

RESULTS_HEADER = ("optimizer", "seed", "step", "f", "grad_norm")
AGGREGATES_HEADER = ("optimizer", "step", "n", "mean", "median", "q25", "q75")
STATUSES = ("ok", "diverged", "failed")


@dataclass
class RunResult:
    optimizer: str
    seed: int
    f: list
    grad_norm: list
    status: str = "ok"
    message: str = ""

    @property
    def complete(self) -> bool:
        return self.status == "ok"


@dataclass
class Aggregate:
    n: np.ndarray
    mean: np.ndarray
    median: np.ndarray
    q25: np.ndarray
    q75: np.ndarray

    def to_dict(self) -> dict:
        return {k: [_num(v) for v in getattr(self, k)] for k in ("n", "mean", "median", "q25", "q75")}


def _num(v):
    v = v.item() if hasattr(v, "item") else v
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


@dataclass
class ResultsTable:
    """Loss curves keyed by (optimizer, seed) for steps ``0..steps``.

    Runs that did not finish are kept with a ``diverged``/``failed`` status;
    they are left out of the aggregates and show up in the divergence rate.
    """

    steps: int
    optimizers: list = field(default_factory=list)
    runs: dict = field(default_factory=dict)

    def add(self, run: RunResult) -> None:
        if run.optimizer not in self.optimizers:
            self.optimizers.append(run.optimizer)
        if run.status not in STATUSES:
            raise ValueError(f"unknown run status {run.status!r}")
        if run.status == "ok" and len(run.f) != self.steps + 1:
            run.status = "diverged"
            run.message = run.message or f"only {len(run.f)} of {self.steps + 1} steps recorded"
        self.runs[(run.optimizer, run.seed)] = run

    def __len__(self) -> int:
        return len(self.runs)

    def seeds(self, optimizer: str) -> list:
        return sorted(s for (o, s) in self.runs if o == optimizer)

    def runs_for(self, optimizer: str) -> list:
        return [self.runs[(optimizer, s)] for s in self.seeds(optimizer)]

    def divergence_rate(self, optimizer: str) -> float:
        runs = self.runs_for(optimizer)
        return sum(not r.complete for r in runs) / len(runs) if runs else math.nan

    def aggregate(self, optimizer: str) -> Aggregate:
        ok = [r.f for r in self.runs_for(optimizer) if r.complete]
        n = np.full(self.steps + 1, len(ok))
        if not ok:
            nan = np.full(self.steps + 1, math.nan)
            return Aggregate(n, nan, nan.copy(), nan.copy(), nan.copy())
        F = np.array(ok, dtype=np.float64)
        q25, med, q75 = np.percentile(F, [25, 50, 75], axis=0)
        return Aggregate(n, F.mean(axis=0), med, q25, q75)

    def summary(self) -> dict:
        out = {}
        for opt in self.optimizers:
            runs = self.runs_for(opt)
            agg = self.aggregate(opt)
            out[opt] = {
                "runs": len(runs),
                "diverged": sum(r.status == "diverged" for r in runs),
                "failed": sum(r.status == "failed" for r in runs),
                "divergence_rate": _num(self.divergence_rate(opt)),
                "final_mean": _num(agg.mean[-1]),
                "final_median": _num(agg.median[-1]),
                "final_iqr": [_num(agg.q25[-1]), _num(agg.q75[-1])],
            }
        return out

    # ----------------------------------------------------------------- CSV

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RESULTS_HEADER)
        for opt in self.optimizers:
            for run in self.runs_for(opt):
                for step, (f, g) in enumerate(zip(run.f, run.grad_norm)):
                    w.writerow([opt, run.seed, step, repr(float(f)), repr(float(g))])
        return buf.getvalue()

    def aggregates_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(AGGREGATES_HEADER)
        for opt in self.optimizers:
            agg = self.aggregate(opt)
            for t in range(self.steps + 1):
                w.writerow([opt, t, int(agg.n[t])] + [repr(float(getattr(agg, k)[t])) for k in ("mean", "median", "q25", "q75")])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, steps: int | None = None) -> "ResultsTable":
        """Rebuild a table; runs shorter than ``steps + 1`` rows are marked diverged.

        ``steps`` defaults to the longest run in the file.
        """
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or tuple(rows[0]) != RESULTS_HEADER:
            raise ValueError("unexpected results CSV header")
        curves: dict = {}
        order: list = []
        for row in rows[1:]:
            opt, seed, step = row[0], int(row[1]), int(row[2])
            if opt not in order:
                order.append(opt)
            f, g = curves.setdefault((opt, seed), ([], []))
            if step != len(f):
                raise ValueError(f"non-contiguous steps for {opt}/{seed}")
            f.append(float(row[3]))
            g.append(float(row[4]))
        if steps is None:
            steps = max((len(f) for f, _ in curves.values()), default=1) - 1
        table = cls(steps, order)
        for (opt, seed), (f, g) in curves.items():
            table.add(RunResult(opt, seed, f, g))
        return table

    def to_json_dict(self) -> dict:
        return {
            "steps": self.steps,
            "optimizers": self.summary(),
            "aggregates": {opt: self.aggregate(opt).to_dict() for opt in self.optimizers},
            "runs": [
                {"optimizer": r.optimizer, "seed": r.seed, "status": r.status, "message": r.message, "final_f": _num(r.f[-1]) if r.f else None}
                for opt in self.optimizers
                for r in self.runs_for(opt)
            ],
        }


def write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"
