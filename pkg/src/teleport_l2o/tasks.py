"""Two-dimensional objectives ``f(x) = ||h(x)||^2`` with a bijective ``h``.

Two families are provided:

* ``ellipse``: ``h(x) = A x + b`` (generalized Booth functions, convex).
* ``rosenbrock``: ``h(x, y) = (c1*y + d(x), a*x + b)`` with
  ``d(x) = d1*x^2 + d2*x + d3`` (generalized Rosenbrock functions).

Every member is invariant under ``x -> h^-1(R h(x))`` for any rotation ``R``.
The formulas in :func:`h_expr` and :func:`grad_expr` only use ``+ - * /`` so
they run unchanged on floats and on :class:`~teleport_l2o.autodiff.Var`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

TASK_RECORD_VERSION = 1
DET_MIN = 1e-3
COEF_MIN = 1e-3
MAX_DRAWS = 1000


class SingularMapError(ValueError):
    """``h`` cannot be inverted at the requested point."""


class SamplingError(RuntimeError):
    """Rejection sampling ran out of draws."""


@dataclass(frozen=True)
class AffineMap2:
    A: tuple  # ((a00, a01), (a10, a11))
    b: tuple  # (b0, b1)

    def __post_init__(self):
        A = tuple(tuple(float(v) for v in row) for row in self.A)
        b = tuple(float(v) for v in self.b)
        if len(A) != 2 or any(len(r) != 2 for r in A) or len(b) != 2:
            raise ValueError("AffineMap2 needs a 2x2 matrix and a 2-vector")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        if self.det == 0.0 or not math.isfinite(self.det):
            raise ValueError("A is singular")

    @property
    def det(self) -> float:
        (a, b), (c, d) = self.A
        return a * d - b * c

    @property
    def matrix(self) -> np.ndarray:
        return np.array(self.A)

    @property
    def inverse(self) -> tuple:
        (a, b), (c, d) = self.A
        det = self.det
        return ((d / det, -b / det), (-c / det, a / det))

    def to_dict(self) -> dict:
        return {"A": [list(r) for r in self.A], "b": list(self.b)}


@dataclass(frozen=True)
class RosenbrockMap:
    a: float
    b: float
    c1: float
    d1: float
    d2: float
    d3: float

    def __post_init__(self):
        for name in ("a", "b", "c1", "d1", "d2", "d3"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if self.a == 0.0 or self.c1 == 0.0:
            raise ValueError("a and c1 must be nonzero for h to be bijective")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("a", "b", "c1", "d1", "d2", "d3")}


Params = Union[AffineMap2, RosenbrockMap]

PRESETS: dict[str, Params] = {
    "booth": AffineMap2(((1.0, 2.0), (2.0, 1.0)), (-7.0, -5.0)),
    "ellipse": AffineMap2(((0.5, 0.0), (0.0, 3.0)), (0.0, 0.0)),
    "rosenbrock": RosenbrockMap(a=1.0, b=-1.0, c1=-10.0, d1=10.0, d2=0.0, d3=0.0),
    "rosenbrock_fixed": RosenbrockMap(a=1.0, b=-1.0, c1=-2.0, d1=0.4, d2=0.0, d3=0.0),
}
# canonical parameters of the fixed-mode distributions
FIXED_DEFAULT = {"ellipse": "ellipse", "rosenbrock": "rosenbrock_fixed"}


def family_of(params: Params) -> str:
    return "ellipse" if isinstance(params, AffineMap2) else "rosenbrock"


@dataclass(frozen=True)
class Task:
    params: Params
    x0: tuple
    seed: int = -1

    def __post_init__(self):
        x0 = tuple(float(v) for v in self.x0)
        if len(x0) != 2 or not all(math.isfinite(v) for v in x0):
            raise ValueError("x0 must be two finite numbers")
        object.__setattr__(self, "x0", x0)

    @property
    def family(self) -> str:
        return family_of(self.params)

    # numpy-facing conveniences
    def h(self, x) -> np.ndarray:
        return h_forward(self, x)

    def f(self, x) -> float:
        return eval_f(self, x)

    def grad(self, x) -> np.ndarray:
        return grad_f(self, x)

    def hess(self, x) -> np.ndarray:
        return hess_f(self, x)

    def minimizer(self) -> np.ndarray:
        return h_inverse(self, (0.0, 0.0))

    def smoothness(self, x=None) -> float:
        """Lipschitz constant of the gradient.

        Exact for ellipse tasks (``2 * lambda_max(A^T A)``); for Rosenbrock
        tasks a local estimate, the spectral norm of the Hessian at ``x``
        (default ``x0``).
        """
        if self.family == "ellipse":
            A = self.params.matrix
            return float(2.0 * np.linalg.eigvalsh(A.T @ A).max())
        x = self.x0 if x is None else x
        return float(np.linalg.norm(hess_f(self, x), 2))

    def to_record(self) -> dict:
        return {
            "version": TASK_RECORD_VERSION,
            "family": self.family,
            "params": self.params.to_dict(),
            "x0": list(self.x0),
            "seed": self.seed,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Task":
        if rec.get("version") != TASK_RECORD_VERSION:
            raise ValueError(f"unsupported task record version {rec.get('version')!r}")
        fam = rec["family"]
        p = rec["params"]
        if fam == "ellipse":
            params = AffineMap2(p["A"], p["b"])
        elif fam == "rosenbrock":
            params = RosenbrockMap(**p)
        else:
            raise ValueError(f"unknown family {fam!r}")
        return cls(params, rec["x0"], int(rec["seed"]))

    def to_json(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Task":
        return cls.from_record(json.loads(text))


def preset_task(name: str, x0=(0.0, 0.0)) -> Task:
    return Task(PRESETS[name], x0)


# ---------------------------------------------------------------------------
# generic formulas (float or Var)
# ---------------------------------------------------------------------------


def h_expr(params: Params, x1, x2):
    if isinstance(params, AffineMap2):
        (a00, a01), (a10, a11) = params.A
        return a00 * x1 + a01 * x2 + params.b[0], a10 * x1 + a11 * x2 + params.b[1]
    p = params
    return p.c1 * x2 + (p.d1 * x1 + p.d2) * x1 + p.d3, p.a * x1 + p.b


def f_expr(params: Params, x1, x2):
    h1, h2 = h_expr(params, x1, x2)
    return h1 * h1 + h2 * h2


def grad_expr(params: Params, x1, x2):
    """``2 J^T h`` written with arithmetic only."""
    h1, h2 = h_expr(params, x1, x2)
    if isinstance(params, AffineMap2):
        (a00, a01), (a10, a11) = params.A
        return 2.0 * (a00 * h1 + a10 * h2), 2.0 * (a01 * h1 + a11 * h2)
    p = params
    dprime = 2.0 * p.d1 * x1 + p.d2
    return 2.0 * (dprime * h1 + p.a * h2), 2.0 * (p.c1 * h1)


def h_inverse_expr(params: Params, y1, y2):
    if isinstance(params, AffineMap2):
        (i00, i01), (i10, i11) = params.inverse
        u1, u2 = y1 - params.b[0], y2 - params.b[1]
        return i00 * u1 + i01 * u2, i10 * u1 + i11 * u2
    p = params
    u = (y2 - p.b) / p.a
    return u, (y1 - ((p.d1 * u + p.d2) * u + p.d3)) / p.c1


# ---------------------------------------------------------------------------
# numpy API
# ---------------------------------------------------------------------------


def _xy(x):
    x = np.asarray(x, dtype=np.float64)
    return float(x[0]), float(x[1])


def h_forward(task: Task, x) -> np.ndarray:
    return np.array(h_expr(task.params, *_xy(x)))


def h_inverse(task: Task, y) -> np.ndarray:
    p = task.params
    if isinstance(p, RosenbrockMap) and p.c1 == 0.0:
        raise SingularMapError("c(x) vanishes")
    return np.array(h_inverse_expr(p, *_xy(y)))


def eval_f(task: Task, x) -> float:
    return float(f_expr(task.params, *_xy(x)))


def grad_f(task: Task, x) -> np.ndarray:
    return np.array(grad_expr(task.params, *_xy(x)))


def hess_f(task: Task, x) -> np.ndarray:
    p = task.params
    if isinstance(p, AffineMap2):
        A = p.matrix
        return 2.0 * A.T @ A
    x1, x2 = _xy(x)
    h1, _ = h_expr(p, x1, x2)
    J = np.array([[2.0 * p.d1 * x1 + p.d2, p.c1], [p.a, 0.0]])
    H = 2.0 * J.T @ J
    H[0, 0] += 2.0 * h1 * 2.0 * p.d1
    return H


# ---------------------------------------------------------------------------
# distributions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TaskDistribution:
    """Where tasks come from.

    ``mode="fixed"`` keeps the objective at ``preset`` (defaults to the
    family's canonical fixed parameters) and only samples ``x0``.
    ``mode="variable"`` draws every coefficient IID from N(0, 1).
    ``reject_near_singular`` toggles the |det A|, |a|, |c1| rejection step.
    """

    family: str
    mode: str = "fixed"
    preset: str | None = None
    reject_near_singular: bool = True
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.family not in ("ellipse", "rosenbrock"):
            raise ValueError(f"unknown family {self.family!r}")
        if self.mode not in ("fixed", "variable"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.preset is not None:
            if self.preset not in PRESETS:
                raise ValueError(f"unknown preset {self.preset!r}")
            if family_of(PRESETS[self.preset]) != self.family:
                raise ValueError(f"preset {self.preset!r} is not a {self.family} map")

    @property
    def fixed_params(self) -> Params:
        return PRESETS[self.preset or FIXED_DEFAULT[self.family]]

    @property
    def tag(self) -> str:
        return f"{self.family}_{self.mode}"

    def to_dict(self) -> dict:
        d = {"family": self.family, "mode": self.mode, "reject_near_singular": self.reject_near_singular}
        if self.preset is not None:
            d["preset"] = self.preset
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TaskDistribution":
        allowed = {"family", "mode", "preset", "reject_near_singular"}
        unknown = set(d) - allowed
        if unknown:
            raise ValueError(f"unknown distribution keys: {sorted(unknown)}")
        return cls(**d)


def _draw_params(dist: TaskDistribution, rng: np.random.Generator) -> Params:
    if dist.reject_near_singular:
        thresh = DET_MIN if dist.family == "ellipse" else COEF_MIN
    else:
        thresh = np.finfo(float).tiny
    for _ in range(MAX_DRAWS):
        z = rng.standard_normal(6)
        if dist.family == "ellipse":
            if abs(z[0] * z[3] - z[1] * z[2]) >= thresh:
                return AffineMap2(((z[0], z[1]), (z[2], z[3])), (z[4], z[5]))
        elif min(abs(z[0]), abs(z[2])) >= thresh:
            return RosenbrockMap(*z)
    raise SamplingError(f"no admissible {dist.family} draw in {MAX_DRAWS} attempts")


def sample_task(dist: TaskDistribution, rng: np.random.Generator, seed: int = -1) -> Task:
    params = dist.fixed_params if dist.mode == "fixed" else _draw_params(dist, rng)
    x0 = rng.standard_normal(2)
    return Task(params, x0, seed)


def task_from_seed(dist: TaskDistribution, seed: int) -> Task:
    return sample_task(dist, np.random.default_rng(seed), seed=int(seed))


def tasks_from_seeds(dist: TaskDistribution, seeds) -> list[Task]:
    return [task_from_seed(dist, s) for s in seeds]
