"""Baseline optimizers producing :class:`Trajectory` records."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .symmetry import OracleError, act, teleport_oracle
from .tasks import SingularMapError, Task, eval_f, grad_f, hess_f

DIVERGENCE_LIMIT = 1e12
CSV_HEADER = ("step", "x1", "x2", "f", "grad_norm", "theta")


class DivergenceError(RuntimeError):
    """Objective exceeded the divergence limit."""


@dataclass
class Record:
    step: int
    x: tuple
    f: float
    grad_norm: float
    theta: Optional[float] = None
    # objective just before a teleport was applied on this step
    f_pre_teleport: Optional[float] = None


@dataclass
class Trajectory:
    records: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    diverged: bool = False
    warnings: list = field(default_factory=list)

    def append(self, x, f: float, grad_norm: float, theta=None, f_pre_teleport=None) -> Record:
        rec = Record(len(self.records), (float(x[0]), float(x[1])), float(f), float(grad_norm), theta, f_pre_teleport)
        self.records.append(rec)
        return rec

    def __len__(self) -> int:
        return len(self.records)

    @property
    def f(self) -> np.ndarray:
        return np.array([r.f for r in self.records])

    @property
    def xs(self) -> np.ndarray:
        return np.array([r.x for r in self.records])

    @property
    def final_f(self) -> float:
        return self.records[-1].f

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.records:
            w.writerow([r.step, repr(r.x[0]), repr(r.x[1]), repr(r.f), repr(r.grad_norm), "" if r.theta is None else repr(r.theta)])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> "Trajectory":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or tuple(rows[0]) != CSV_HEADER:
            raise ValueError("unexpected trajectory CSV header")
        traj = cls()
        for row in rows[1:]:
            theta = float(row[5]) if row[5] else None
            traj.append((float(row[1]), float(row[2])), float(row[3]), float(row[4]), theta)
        return traj


def _start(task: Task, x0, tag: str, **hyper) -> tuple[np.ndarray, Trajectory]:
    x = np.array(task.x0 if x0 is None else x0, dtype=np.float64)
    traj = Trajectory(meta={"task_seed": task.seed, "optimizer": tag, "hyperparams": hyper})
    traj.append(x, eval_f(task, x), np.linalg.norm(grad_f(task, x)))
    return x, traj


def _record(traj: Trajectory, task: Task, x, theta=None, f_pre=None) -> bool:
    """Append ``x``; return False (and flag the trajectory) on divergence."""
    fx = eval_f(task, x) if np.all(np.isfinite(x)) else math.inf
    if not math.isfinite(fx) or fx > DIVERGENCE_LIMIT:
        traj.diverged = True
        traj.warnings.append(f"diverged at step {len(traj)}")
        return False
    traj.append(x, fx, np.linalg.norm(grad_f(task, x)), theta, f_pre)
    return True


def resolve_alpha(task: Task, alpha) -> float:
    """Accept a number, or the string ``"1/L"`` for the task's smoothness step."""
    if isinstance(alpha, str):
        if alpha.replace(" ", "") != "1/L":
            raise ValueError(f"unsupported step size {alpha!r}")
        return 1.0 / task.smoothness()
    return float(alpha)


def run_gd(task: Task, x0=None, alpha=0.01, steps: int = 100) -> Trajectory:
    alpha = resolve_alpha(task, alpha)
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    x, traj = _start(task, x0, "gd", alpha=alpha)
    with np.errstate(all="ignore"):
        for _ in range(steps):
            x = x - alpha * grad_f(task, x)
            if not _record(traj, task, x):
                break
    return traj


def run_momentum(task: Task, x0=None, alpha=0.01, beta: float = 0.9, steps: int = 100) -> Trajectory:
    alpha = resolve_alpha(task, alpha)
    if not 0.0 <= beta < 1.0:
        raise ValueError("beta must lie in [0, 1)")
    x, traj = _start(task, x0, "momentum", alpha=alpha, beta=beta)
    v = np.zeros(2)
    with np.errstate(all="ignore"):
        for _ in range(steps):
            v = beta * v - alpha * grad_f(task, x)
            x = x + v
            if not _record(traj, task, x):
                break
    return traj


def run_newton(task: Task, x0=None, steps: int = 50) -> Trajectory:
    x, traj = _start(task, x0, "newton")
    for _ in range(steps):
        g = grad_f(task, x)
        (a, b), (c, d) = hess_f(task, x)
        det = a * d - b * c
        if det == 0.0 or not math.isfinite(det) or abs(det) < 1e-300:
            traj.warnings.append(f"singular Hessian at step {len(traj) - 1}")
            break
        step = np.array([d * g[0] - b * g[1], -c * g[0] + a * g[1]]) / det
        x = x - step
        if not _record(traj, task, x):
            break
    return traj


@dataclass(frozen=True)
class TeleportSchedule:
    steps: frozenset

    def __init__(self, steps: Iterable[int] = ()):
        idx = frozenset(int(s) for s in steps)
        if any(s < 0 for s in idx):
            raise ValueError("teleport steps must be non-negative")
        object.__setattr__(self, "steps", idx)

    def __contains__(self, t: int) -> bool:
        return t in self.steps

    @classmethod
    def every(cls, k: int, n: int) -> "TeleportSchedule":
        return cls(range(0, n, k))


def run_teleport_gd(
    task: Task,
    x0=None,
    alpha=0.01,
    steps: int = 100,
    schedule: TeleportSchedule = TeleportSchedule(),
    grid_n: int = 64,
    refine_iters: int = 40,
) -> Trajectory:
    """Gradient descent that teleports to the max-gradient orbit point at scheduled steps.

    A teleport at step ``t`` replaces record ``t`` (same ``f``, larger or
    equal gradient norm) before the step to ``t + 1`` is taken.
    """
    alpha = resolve_alpha(task, alpha)
    if any(s >= steps for s in schedule.steps):
        raise ValueError("teleport step beyond trajectory length")
    x, traj = _start(task, x0, "teleport_gd", alpha=alpha, schedule=sorted(schedule.steps))
    with np.errstate(all="ignore"):
        for t in range(steps):
            if t in schedule:
                try:
                    theta, _ = teleport_oracle(task, x, grid_n, refine_iters)
                    y = act(task, theta, x)
                except (OracleError, SingularMapError) as exc:
                    traj.warnings.append(f"teleport skipped at step {t}: {exc}")
                else:
                    f_pre = traj.records[t].f
                    x = y
                    traj.records[t] = Record(t, (float(y[0]), float(y[1])), eval_f(task, y), float(np.linalg.norm(grad_f(task, y))), theta, f_pre)
            x = x - alpha * grad_f(task, x)
            if not _record(traj, task, x):
                break
    return traj
