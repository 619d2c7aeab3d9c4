"""LSTM meta-optimizers trained through unrolled optimization trajectories.

Variants
--------
``vanilla``
    ``x_t = x_{t-1} + m(z_t)`` with ``z_t = grad f(x_{t-1})``.
``teleport``
    Same update, followed by the rotation ``g_theta`` emitted by a second head
    of the same LSTM: ``x_t = g_theta(x_{t-1} + m(z_t))``.
``teleport_momentum``
    Two LSTMs.  ``m1`` emits a step size through a softplus head, ``m2``
    emits a momentum coefficient and a rotation.  ``v_t = beta_t v_{t-1} -
    alpha_t z_t``, ``x_t = x_{t-1} + v_t``, then ``x_t <- g_theta(x_t)`` on the
    teleport schedule.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .. import autodiff as ad
from ..optim import DIVERGENCE_LIMIT, DivergenceError, Trajectory
from ..symmetry import act_expr, rotation_terms
from ..tasks import Task, TaskDistribution, eval_f, f_expr, grad_expr, grad_f, sample_task
from .lstm import LstmParams, MetaState, TapedLstm, softplus_inverse, transform_heads

log = logging.getLogger(__name__)

VARIANTS = ("vanilla", "teleport", "teleport_momentum")
HELDOUT_OFFSET = 2**31
LOG_P = 10.0


class ConfigError(ValueError):
    pass


@dataclass
class L2OConfig:
    variant: str = "vanilla"
    runs: int = 200
    epochs: int = 40  # inner steps per run
    unroll: int = 10  # steps per truncated window
    weights: object = "uniform"  # or one positive weight per inner step
    hidden_dim: int = 32
    meta_lr: tuple = (1e-2, 1e-1)  # (m1 or the single net, m2)
    meta_momentum: float = 0.9
    clip_norm: float = 1.0
    inner_lr: float = 0.05  # initial step size of the lr head
    update_scale: float = 0.1
    teleport_steps: Optional[list] = None  # None: every step
    preprocess: str = "raw"
    eval_tasks: int = 20
    seed: int = 0

    def __post_init__(self):
        self.meta_lr = tuple(float(v) for v in (self.meta_lr if isinstance(self.meta_lr, (list, tuple)) else (self.meta_lr,) * 2))
        if len(self.meta_lr) == 1:
            self.meta_lr = self.meta_lr * 2
        self.validate()

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        for name in ("runs", "epochs", "unroll", "hidden_dim", "eval_tasks"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.epochs % self.unroll:
            raise ConfigError("unroll must divide epochs")
        if isinstance(self.weights, str):
            if self.weights != "uniform":
                raise ConfigError("weights must be 'uniform' or a list")
        else:
            w = list(self.weights)
            if len(w) != self.epochs or any(not (float(v) > 0) for v in w):
                raise ConfigError("weights must be N positive numbers")
        if self.preprocess not in ("raw", "log"):
            raise ConfigError("preprocess must be 'raw' or 'log'")
        if self.inner_lr <= 0 or self.update_scale <= 0 or self.clip_norm <= 0:
            raise ConfigError("inner_lr, update_scale and clip_norm must be positive")
        if len(self.meta_lr) != 2 or min(self.meta_lr) <= 0:
            raise ConfigError("meta_lr must be one or two positive rates")
        if not 0 <= self.meta_momentum < 1:
            raise ConfigError("meta_momentum must lie in [0, 1)")
        if self.teleport_steps is not None:
            if any(int(t) < 1 or int(t) > self.epochs for t in self.teleport_steps):
                raise ConfigError("teleport steps must lie in 1..N")

    def weight(self, t: int) -> float:
        if isinstance(self.weights, str) or t > len(self.weights):
            return 1.0  # steps past the training horizon (evaluation only)
        return float(self.weights[t - 1])

    def teleports_at(self, t: int) -> bool:
        return self.teleport_steps is None or t in self.teleport_steps

    @property
    def input_dim(self) -> int:
        return 2 if self.preprocess == "raw" else 4

    def to_dict(self) -> dict:
        d = asdict(self)
        d["meta_lr"] = list(self.meta_lr)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "L2OConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown L2O config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def init_nets(cfg: L2OConfig, rng: np.random.Generator) -> list[LstmParams]:
    d, H = cfg.input_dim, cfg.hidden_dim
    if cfg.variant == "vanilla":
        return [LstmParams.init(d, H, ("update",), rng)]
    if cfg.variant == "teleport":
        return [LstmParams.init(d, H, ("update", "theta"), rng)]
    m1 = LstmParams.init(d, H, ("lr",), rng, head_bias={"lr": softplus_inverse(cfg.inner_lr)})
    m2 = LstmParams.init(d, H, ("beta", "theta"), rng)
    return [m1, m2]


# ---------------------------------------------------------------------------
# unrolling
# ---------------------------------------------------------------------------


@dataclass
class Carry:
    """Numeric state carried across truncation boundaries."""

    x: np.ndarray
    v: np.ndarray
    states: list
    t: int = 0

    @classmethod
    def start(cls, task: Task, nets: Sequence[LstmParams], x0=None) -> "Carry":
        x = np.array(task.x0 if x0 is None else x0, dtype=np.float64)
        return cls(x, np.zeros(2), [MetaState.zeros(n.hidden_dim) for n in nets])


def _features(tape: ad.Tape, z: tuple, cfg: L2OConfig) -> np.ndarray:
    ids = np.array([z[0].id, z[1].id], dtype=np.int64)
    if cfg.preprocess == "raw":
        return ids
    # smooth log-magnitude / sign pair per coordinate
    eps = tape.vars(np.full(2, 1e-16))
    mag = tape.apply_array("ln", tape.apply_array("add", tape.apply_array("sqr", ids), eps))
    mag = tape.apply_array("mul", mag, tape.vars(np.full(2, 0.5 / LOG_P)))
    sgn = tape.apply_array("tanh", tape.apply_array("mul", ids, tape.vars(np.full(2, math.exp(LOG_P)))))
    return np.concatenate([mag, sgn])


@dataclass
class StepOut:
    x: tuple
    v: tuple
    theta: Optional[ad.Var]
    x_pre: Optional[tuple]
    teleported: bool


def _inner_step(cfg: L2OConfig, taped: list, states: list, task: Task, x: tuple, v: tuple, t: int) -> tuple[StepOut, list]:
    """Build one meta-optimizer step on the tape."""
    tape = taped[0].tape
    z = grad_expr(task.params, x[0], x[1])
    feats = _features(tape, z, cfg)
    outs, new_states = [], []
    for net, (h, c) in zip(taped, states):
        raw, nh, nc = net.step(feats, h, c)
        outs.append(transform_heads(tape, raw, cfg.update_scale))
        new_states.append((nh, nc))

    def var(i):
        return ad.Var(tape, node=int(i))

    theta = None
    if cfg.variant in ("vanilla", "teleport"):
        u = outs[0]["update"]
        xp = (x[0] + var(u[0]), x[1] + var(u[1]))
        if cfg.variant == "teleport":
            theta = var(outs[0]["theta"][0])
    else:
        alpha = var(outs[0]["lr"][0])
        beta = var(outs[1]["beta"][0])
        theta = var(outs[1]["theta"][0])
        v = (beta * v[0] - alpha * z[0], beta * v[1] - alpha * z[1])
        xp = (x[0] + v[0], x[1] + v[1])
    if theta is not None and cfg.teleports_at(t):
        s, cm1 = rotation_terms(theta)
        xn = act_expr(task.params, s, cm1, xp[0], xp[1])
        return StepOut(xn, v, theta, xp, True), new_states
    return StepOut(xp, v, theta, None, False), new_states


def unroll_window(
    nets: Sequence[LstmParams],
    cfg: L2OConfig,
    task: Task,
    carry: Carry,
    n_steps: int,
    tape: Optional[ad.Tape] = None,
    traj: Optional[Trajectory] = None,
):
    """Unroll ``n_steps`` inner steps on one tape.

    Returns ``(tape, loss_var, param_leaf_ids, new_carry)``.  The loss is
    ``sum_t w_t f(x_t)`` over the window.  Raises :class:`DivergenceError`
    when the objective blows up.
    """
    tape = tape if tape is not None else ad.Tape(1 << 16)
    try:
        taped = [TapedLstm(p, tape) for p in nets]
        states = [net.state_leaves(s) for net, s in zip(taped, carry.states)]
        x = (ad.Var(tape, carry.x[0]), ad.Var(tape, carry.x[1]))
        v = (ad.Var(tape, carry.v[0]), ad.Var(tape, carry.v[1]))
        loss = None
        t = carry.t
        for _ in range(n_steps):
            t += 1
            out, states = _inner_step(cfg, taped, states, task, x, v, t)
            x, v = out.x, out.v
            fx = f_expr(task.params, x[0], x[1])
            if fx.value > DIVERGENCE_LIMIT:
                raise DivergenceError(f"objective exceeded {DIVERGENCE_LIMIT:g} at step {t}")
            term = fx * cfg.weight(t)
            loss = term if loss is None else loss + term
            if traj is not None:
                xv = np.array([x[0].value, x[1].value])
                f_pre = eval_f(task, [out.x_pre[0].value, out.x_pre[1].value]) if out.teleported else None
                theta = out.theta.value if out.teleported else None
                traj.append(xv, fx.value, np.linalg.norm(grad_f(task, xv)), theta, f_pre)
    except ad.NonFiniteError as exc:
        raise DivergenceError(str(exc)) from exc
    new_states = [MetaState([tape.values(h).copy() for h in hs], [tape.values(c).copy() for c in cs], t) for hs, cs in states]
    new = Carry(np.array([x[0].value, x[1].value]), np.array([v[0].value, v[1].value]), new_states, t)
    return tape, loss, [n.ids for n in taped], new


def meta_loss(nets: Sequence[LstmParams], cfg: L2OConfig, task: Task, steps: Optional[int] = None) -> float:
    """Value of the full unrolled meta-loss (no gradient)."""
    carry = Carry.start(task, nets)
    _, loss, _, _ = unroll_window(nets, cfg, task, carry, steps or cfg.epochs)
    return loss.value


def meta_gradient(nets: Sequence[LstmParams], cfg: L2OConfig, task: Task, steps: Optional[int] = None) -> tuple[float, list]:
    """Meta-loss over one window from the task start and its gradient per net."""
    carry = Carry.start(task, nets)
    tape, loss, ids, _ = unroll_window(nets, cfg, task, carry, steps or cfg.epochs)
    adj = tape.backward(loss.id)
    return loss.value, [adj[i].copy() for i in ids]


def inner_update(variant: str, nets: Sequence[LstmParams], task: Task, x_prev, states: list, velocity, alpha: float, t: int = 1, cfg: Optional[L2OConfig] = None):
    """One numeric meta-optimizer step.

    Returns ``(x_next, new_states, new_velocity, theta_used)``; ``theta_used``
    is None when no teleport was applied.
    """
    if cfg is None:
        cfg = L2OConfig(variant=variant, inner_lr=alpha, hidden_dim=nets[0].hidden_dim, runs=1, epochs=max(t, 1), unroll=max(t, 1))
    carry = Carry(np.asarray(x_prev, dtype=np.float64), np.asarray(velocity, dtype=np.float64), list(states), t - 1)
    tape = ad.Tape(1 << 14)
    taped = [TapedLstm(p, tape) for p in nets]
    st = [net.state_leaves(s) for net, s in zip(taped, carry.states)]
    x = (ad.Var(tape, carry.x[0]), ad.Var(tape, carry.x[1]))
    v = (ad.Var(tape, carry.v[0]), ad.Var(tape, carry.v[1]))
    out, st = _inner_step(cfg, taped, st, task, x, v, t)
    new_states = [MetaState([tape.values(h).copy() for h in hs], [tape.values(c).copy() for c in cs], t) for hs, cs in st]
    theta = out.theta.value if out.teleported else None
    return np.array([out.x[0].value, out.x[1].value]), new_states, np.array([out.v[0].value, out.v[1].value]), theta


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


class MomentumSGD:
    """Heavy-ball SGD over a list of flat parameter vectors, with global norm clipping."""

    def __init__(self, lrs: Sequence[float], momentum: float = 0.9, clip_norm: float = 1.0):
        self.lrs = list(lrs)
        self.momentum = momentum
        self.clip_norm = clip_norm
        self.bufs = None

    def step(self, params: list, grads: list) -> bool:
        """Apply one update in place; returns False (and skips) on non-finite gradients."""
        if not all(np.all(np.isfinite(g)) for g in grads):
            return False
        norm = math.sqrt(sum(float(g @ g) for g in grads))
        scale = min(1.0, self.clip_norm / norm) if norm > 0 else 1.0
        if self.bufs is None:
            self.bufs = [np.zeros_like(g) for g in grads]
        for i, (p, g) in enumerate(zip(params, grads)):
            self.bufs[i] = self.momentum * self.bufs[i] + scale * g
            p.flat -= self.lrs[i] * self.bufs[i]
        return True


@dataclass
class TrainResult:
    nets: list
    curve: list  # per-run summed meta-loss (nan for aborted runs)
    train_seeds: list
    diverged_runs: int = 0
    skipped_steps: int = 0
    meta_steps: int = 0
    config: Optional[L2OConfig] = None
    notes: list = field(default_factory=list)

    def curve_csv(self) -> str:
        lines = ["run,meta_loss"]
        lines += [f"{i},{v!r}" for i, v in enumerate(self.curve)]
        return "\n".join(lines) + "\n"


def training_seeds(cfg: L2OConfig) -> list[int]:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    return [int(s) for s in rng.integers(0, HELDOUT_OFFSET, size=cfg.runs)]


def heldout_seeds(n: int, start: int = 0) -> list[int]:
    """Evaluation seeds, disjoint from every training seed by construction."""
    return [HELDOUT_OFFSET + start + i for i in range(n)]


def train(cfg: L2OConfig, dist: TaskDistribution, rng: Optional[np.random.Generator] = None, nets: Optional[list] = None) -> TrainResult:
    """Truncated-BPTT meta-training.

    For each of ``runs`` tasks the inner problem is unrolled for ``epochs``
    steps; every ``unroll`` steps the window loss is differentiated, the
    meta-parameters are updated and the graph is cut (numeric state carried).
    """
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))
    nets = [p.copy() for p in nets] if nets is not None else init_nets(cfg, rng)
    opt = MomentumSGD(cfg.meta_lr[: len(nets)], cfg.meta_momentum, cfg.clip_norm)
    seeds = training_seeds(cfg)
    res = TrainResult(nets, [], seeds, config=cfg)
    tape = ad.Tape(1 << 18)
    for r, seed in enumerate(seeds):
        task = sample_task(dist, np.random.default_rng(seed), seed=seed)
        carry = Carry.start(task, nets)
        total = 0.0
        for _ in range(cfg.epochs // cfg.unroll):
            tape.reset()  # truncation boundary: graph cut, numeric state carried
            try:
                tape, loss, ids, carry = unroll_window(nets, cfg, task, carry, cfg.unroll, tape=tape)
            except DivergenceError as exc:
                res.diverged_runs += 1
                res.notes.append(f"run {r}: {exc}")
                total = math.nan
                break
            adj = tape.backward(loss.id)
            total += loss.value
            if opt.step(nets, [adj[i] for i in ids]):
                res.meta_steps += 1
            else:
                res.skipped_steps += 1
        res.curve.append(total)
        if (r + 1) % 50 == 0:
            log.info("run %d/%d meta-loss %.4g", r + 1, cfg.runs, total)
    return res


def evaluate(nets: Sequence[LstmParams], cfg: L2OConfig, tasks: Sequence[Task], steps: Optional[int] = None) -> list[Trajectory]:
    """Roll out frozen meta-optimizers; one trajectory per task (record 0 is x0)."""
    steps = steps or cfg.epochs
    out = []
    for task in tasks:
        traj = Trajectory(meta={"task_seed": task.seed, "optimizer": f"l2o_{cfg.variant}", "hyperparams": {"variant": cfg.variant}})
        x0 = np.array(task.x0)
        traj.append(x0, eval_f(task, x0), np.linalg.norm(grad_f(task, x0)))
        carry = Carry.start(task, nets)
        try:
            unroll_window(nets, cfg, task, carry, steps, traj=traj)
        except DivergenceError as exc:
            traj.diverged = True
            traj.warnings.append(str(exc))
        out.append(traj)
    return out


def trajectory_meta_loss(traj: Trajectory, cfg: L2OConfig) -> float:
    """``sum_t w_t f(x_t)`` over records 1..N of an evaluated trajectory."""
    return float(sum(cfg.weight(r.step) * r.f for r in traj.records[1:]))
