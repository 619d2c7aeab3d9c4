"""SO(2) actions ``g_theta = h^-1 . R_theta . h`` and the teleportation oracle."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .tasks import AffineMap2, SingularMapError, Task, grad_f, h_expr

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
TWO_PI = 2.0 * math.pi


class OracleError(RuntimeError):
    """No grid point of the orbit could be evaluated."""


def wrap_angle(theta: float) -> float:
    """Map an angle into (-pi, pi]."""
    w = math.remainder(float(theta), TWO_PI)
    return math.pi if w == -math.pi else w


@dataclass(frozen=True)
class GroupElement:
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    def __mul__(self, other: "GroupElement") -> "GroupElement":
        return GroupElement(self.theta + other.theta)

    def __call__(self, task: Task, x) -> np.ndarray:
        return act(task, self.theta, x)


def act_expr(params, sin_t, cos_m1, x1, x2):
    """Rotate ``h(x)`` and pull back, written as an increment on ``x``.

    ``cos_m1`` is ``cos(theta) - 1``.  With ``sin_t = cos_m1 = 0`` the result
    equals the input exactly, which keeps untrained teleport heads inert.
    Works on floats and on autodiff ``Var`` handles.
    """
    h1, h2 = h_expr(params, x1, x2)
    d1 = cos_m1 * h1 - sin_t * h2
    d2 = sin_t * h1 + cos_m1 * h2
    if isinstance(params, AffineMap2):
        (i00, i01), (i10, i11) = params.inverse
        return x1 + (i00 * d1 + i01 * d2), x2 + (i10 * d1 + i11 * d2)
    p = params
    du = d2 / p.a
    u = x1 + du
    dd = du * (p.d1 * (u + x1) + p.d2)
    return u, x2 + (d1 - dd) / p.c1


def rotation_terms(theta):
    """``(sin(theta), cos(theta) - 1)`` for a float or ``Var`` angle."""
    if isinstance(theta, ad.Var):
        s = ad.sin(theta * 0.5)
        return ad.sin(theta), -2.0 * (s * s)
    s = math.sin(0.5 * theta)
    return math.sin(theta), -2.0 * s * s


def act(task: Task, theta: float, x) -> np.ndarray:
    """``h^-1(R_theta h(x))``."""
    x = np.asarray(x, dtype=np.float64)
    s, cm1 = rotation_terms(float(theta))
    with np.errstate(all="ignore"):
        out = np.array(act_expr(task.params, s, cm1, float(x[0]), float(x[1])))
    if not np.all(np.isfinite(out)):
        raise SingularMapError("group action left the finite domain")
    return out


def grad_norm_on_orbit(task: Task, x, theta: float) -> float:
    return float(np.linalg.norm(grad_f(task, act(task, theta, x))))


def _golden_max(fn, lo: float, hi: float, iters: int) -> tuple[float, float]:
    c = hi - INV_PHI * (hi - lo)
    d = lo + INV_PHI * (hi - lo)
    fc, fd = fn(c), fn(d)
    for _ in range(iters):
        if fc >= fd:
            hi, d, fd = d, c, fc
            c = hi - INV_PHI * (hi - lo)
            fc = fn(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + INV_PHI * (hi - lo)
            fd = fn(d)
    return (c, fc) if fc >= fd else (d, fd)


def teleport_oracle(task: Task, x, grid_n: int = 64, refine_iters: int = 40) -> tuple[float, float]:
    """Angle maximizing the gradient norm over the orbit of ``x``.

    A uniform grid (always containing theta = 0) is scanned, then the bracket
    around every local maximum of the grid is refined by golden-section search
    and the best result kept.  Ties among grid points go to the smallest
    ``|theta|``, so a flat orbit returns the identity.
    """
    if grid_n < 8:
        raise ValueError("grid_n must be at least 8")
    if refine_iters < 0:
        raise ValueError("refine_iters must be non-negative")

    def value(theta: float) -> float:
        try:
            v = grad_norm_on_orbit(task, x, theta)
        except SingularMapError:
            return -math.inf
        return v if math.isfinite(v) else -math.inf

    grid = [wrap_angle(TWO_PI * k / grid_n) for k in range(grid_n)]
    vals = [value(t) for t in grid]
    best = max(vals)
    if best == -math.inf:
        raise OracleError("every orbit grid point is singular")
    tol = 1e-12 * abs(best)
    theta_best = min((t for t, v in zip(grid, vals) if v >= best - tol), key=abs)
    val_best = value(theta_best)
    if refine_iters > 0 and best > 0.0:
        cell = TWO_PI / grid_n
        # rank peaks by grid value so equal refinements keep the stronger peak
        peaks = sorted(
            (k for k in range(grid_n) if vals[k] > -math.inf and vals[k] >= vals[k - 1] and vals[k] >= vals[(k + 1) % grid_n]),
            key=lambda k: -vals[k],
        )
        for k in peaks:
            t_ref, v_ref = _golden_max(value, grid[k] - cell, grid[k] + cell, refine_iters)
            if v_ref > val_best + tol:
                theta_best, val_best = wrap_angle(t_ref), v_ref
    return theta_best, val_best
