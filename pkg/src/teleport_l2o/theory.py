"""Numerical checks of the Newton/teleportation connection on quadratics.

Includes the gradient/Newton split, the quadratic-form inequality behind it,
the closed-form rotation gradient for ``f(x) = ||Bx||^2`` under one gradient
step, and the learn-to-teleport runner that updates a single rotation angle
online.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .optim import DIVERGENCE_LIMIT, DivergenceError, Trajectory

EIG_FLOOR = 1e-12
COND_MAX = 1e12


class DecompositionError(ValueError):
    pass


class ZeroGradientError(DecompositionError):
    pass


class SingularMatrixError(ValueError):
    pass


def rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


R90 = np.array([[0.0, -1.0], [1.0, 0.0]])


def psd_sqrt(A: np.ndarray) -> np.ndarray:
    """Symmetric positive definite square root via ``A = Q diag(l) Q^T``."""
    A = np.asarray(A, dtype=np.float64)
    if not np.allclose(A, A.T, rtol=0, atol=1e-12 * (1 + np.abs(A).max())):
        raise ValueError("matrix is not symmetric")
    lam, Q = np.linalg.eigh(0.5 * (A + A.T))
    if lam.min() <= 0:
        raise ValueError("matrix is not positive definite")
    return (Q * np.sqrt(lam)) @ Q.T


# ---------------------------------------------------------------------------
# Newton direction split
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NewtonDecomposition:
    v1: np.ndarray  # -grad
    v2: np.ndarray  # -H^-1 grad
    v_par: np.ndarray
    v_perp: np.ndarray


def newton_decompose(grad, hess) -> NewtonDecomposition:
    g = np.asarray(grad, dtype=np.float64)
    H = np.asarray(hess, dtype=np.float64)
    gg = float(g @ g)
    if gg == 0.0:
        raise ZeroGradientError("gradient is zero")
    if not np.isfinite(np.linalg.cond(H)) or np.linalg.cond(H) > COND_MAX:
        raise DecompositionError("Hessian is singular or ill-conditioned")
    v1 = -g
    v2 = -np.linalg.solve(H, g)
    v_par = (v2 @ v1) / gg * v1
    return NewtonDecomposition(v1, v2, v_par, v2 - v_par)


def prop1_directional_derivative(grad, hess, v_perp) -> float:
    """``v_perp . d/dw ||grad||^2`` where the latter equals ``2 H grad``."""
    g = np.asarray(grad, dtype=np.float64)
    H = np.asarray(hess, dtype=np.float64)
    return float(np.asarray(v_perp) @ (2.0 * H @ g))


def prop1_scale(grad, hess) -> float:
    g = np.asarray(grad, dtype=np.float64)
    return float(g @ g) * float(np.linalg.norm(hess, 2))


# ---------------------------------------------------------------------------
# quadratic form inequality
# ---------------------------------------------------------------------------


def quadratic_power_form(w, A, k: int) -> float:
    """``w^T A^k w`` for symmetric ``A`` and integer ``k`` (negative allowed)."""
    w = np.asarray(w, dtype=np.float64)
    lam, Q = np.linalg.eigh(np.asarray(A, dtype=np.float64))
    if k < 0 and np.abs(lam).min() < EIG_FLOOR:
        raise SingularMatrixError("negative power of a singular matrix")
    c = Q.T @ w
    return float(np.sum(lam ** int(k) * c * c))


def lemma1_check(w, A, alpha: int, beta: int) -> tuple[float, float]:
    """``((w^T A^a w)^2, (w^T A^(a+b) w)(w^T A^(a-b) w))``.

    For positive definite ``A`` the first never exceeds the second.
    """
    lhs = quadratic_power_form(w, A, alpha) ** 2
    rhs = quadratic_power_form(w, A, alpha + beta) * quadratic_power_form(w, A, alpha - beta)
    return lhs, rhs


# ---------------------------------------------------------------------------
# rotation gradient under one GD step on ||Bx||^2
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadraticSpec:
    B: np.ndarray

    def __post_init__(self):
        B = np.asarray(self.B, dtype=np.float64)
        if not np.allclose(B, B.T, atol=1e-12):
            raise ValueError("B must be symmetric")
        if np.linalg.eigvalsh(B).min() <= 0:
            raise ValueError("B must be positive definite")
        object.__setattr__(self, "B", B)

    @classmethod
    def from_A(cls, A) -> "QuadraticSpec":
        return cls(psd_sqrt(A))

    @property
    def A(self) -> np.ndarray:
        return self.B.T @ self.B

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.A)

    @property
    def smoothness(self) -> float:
        return float(2.0 * self.eigenvalues.max())

    def f(self, x) -> float:
        Bx = self.B @ np.asarray(x, dtype=np.float64)
        return float(Bx @ Bx)

    def act(self, theta: float, x) -> np.ndarray:
        return np.linalg.solve(self.B, rotation(theta) @ (self.B @ np.asarray(x, dtype=np.float64)))


def composed_step_value(spec: QuadraticSpec, alpha: float, x, theta: float) -> float:
    """``f((B^-1 - 2 alpha B) R_theta B x)``: loss after teleport-then-step."""
    B = spec.B
    C = np.linalg.inv(B) - 2.0 * alpha * B
    return spec.f(C @ rotation(theta) @ B @ np.asarray(x, dtype=np.float64))


def theta_grad_closed_form(spec: QuadraticSpec, alpha: float, x) -> float:
    """``2 (Bx)^T (CAC) (R_90 Bx)`` with ``C = B^-1 - 2 alpha B``, at theta = 0.

    ``CAC = (I - 2 alpha A)^2`` shares the eigenvectors of ``A`` with
    eigenvalues ``(1 - 2 alpha lambda_i)^2``.
    """
    B = spec.B
    Bx = B @ np.asarray(x, dtype=np.float64)
    M = np.eye(2) - 2.0 * alpha * spec.A
    return float(2.0 * Bx @ (M @ M) @ (R90 @ Bx))


def _rotated_step_theta_grad(spec: QuadraticSpec, alpha: float, x, theta: float) -> tuple[np.ndarray, float]:
    """Taped step ``x -> g_theta(x) - alpha grad f(g_theta(x))``; returns (x_next, d f(x_next)/d theta)."""
    tape = ad.Tape(256)
    th = ad.Var(tape, theta)
    c, s = ad.cos(th), ad.sin(th)
    B = spec.B
    Binv = np.linalg.inv(B)
    A = spec.A
    bx = B @ np.asarray(x, dtype=np.float64)
    r = (c * bx[0] - s * bx[1], s * bx[0] + c * bx[1])
    y = [Binv[i, 0] * r[0] + Binv[i, 1] * r[1] for i in range(2)]
    gy = [2.0 * (A[i, 0] * y[0] + A[i, 1] * y[1]) for i in range(2)]
    xn = [y[i] - alpha * gy[i] for i in range(2)]
    bxn = [B[i, 0] * xn[0] + B[i, 1] * xn[1] for i in range(2)]
    loss = bxn[0] * bxn[0] + bxn[1] * bxn[1]
    adj = tape.backward(loss.id)
    return np.array([xn[0].value, xn[1].value]), float(adj[th.id])


def run_alg2(spec: QuadraticSpec, x0, theta0: float = 0.0, alpha: float | None = None, beta: float = 0.05, steps: int = 50) -> Trajectory:
    """Learn one rotation angle online while running gradient descent.

    Each step teleports ``y = g_theta(x)``, takes ``x <- y - alpha grad f(y)``
    and then moves ``theta`` against ``d f(x_next) / d theta``.  Record ``t``
    holds ``x_t`` and the angle ``theta_t`` applied to it.
    """
    if alpha is None:
        alpha = 1.0 / spec.smoothness
    if not 0.0 < alpha <= 1.0 / spec.smoothness * (1 + 1e-12):
        raise ValueError("alpha must lie in (0, 1/L]")
    if beta <= 0:
        raise ValueError("beta must be positive")
    x = np.asarray(x0, dtype=np.float64)
    theta = float(theta0)
    traj = Trajectory(meta={"optimizer": "alg2", "hyperparams": {"alpha": alpha, "beta": beta, "theta0": theta0}})
    thetas_grad = []
    for _ in range(steps):
        A = spec.A
        traj.append(x, spec.f(x), np.linalg.norm(2.0 * A @ x), theta)
        x_next, g = _rotated_step_theta_grad(spec, alpha, x, theta)
        thetas_grad.append(g)
        x, theta = x_next, theta - beta * g
        if spec.f(x) > DIVERGENCE_LIMIT:
            traj.diverged = True
            raise DivergenceError("learn-to-teleport run diverged")
    traj.append(x, spec.f(x), np.linalg.norm(2.0 * spec.A @ x), theta)
    traj.meta["theta_grads"] = thetas_grad
    return traj


def rotates_toward_major_axis(spec: QuadraticSpec, traj: Trajectory, first: int = 10, tol: float = 1e-14) -> bool:
    """Whether each angle update turns ``B y_t`` toward the largest-eigenvalue axis.

    ``y_t = g_{theta_t}(x_t)`` is the teleported point the gradient was taken
    at.  Steps where ``B y_t`` already lies on an axis (zero gradient) pass.
    """
    lam, Q = np.linalg.eigh(spec.A)
    if np.linalg.det(Q) < 0:
        Q[:, 0] = -Q[:, 0]  # keep a proper rotation so angle signs carry over
    B = spec.B
    recs = traj.records
    for t in range(min(first, len(recs) - 1)):
        dtheta = recs[t + 1].theta - recs[t].theta
        u = Q.T @ (rotation(recs[t].theta) @ B @ np.asarray(recs[t].x))
        # rotating u by +eps grows its major-axis share iff u_minor * u_major > 0
        cross = u[0] * u[1]
        if abs(cross) <= tol * (u @ u) or dtheta == 0.0:
            continue
        if np.sign(dtheta) * cross <= 0:
            return False
    return True
