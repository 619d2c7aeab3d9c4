"""Property sweeps with pass/fail, counts and worst-case margins.

Each check returns a :class:`CheckResult`; :func:`run_all` collects them into
the JSON report printed by ``teleport-l2o verify``.  ``margin`` is the
smallest slack observed (negative means a violation).
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import optim, symmetry, theory
from .tasks import AffineMap2, Task, TaskDistribution, eval_f, grad_f, sample_task


@dataclass
class CheckResult:
    name: str
    passed: bool
    count: int
    violations: int
    margin: float
    seconds: float = 0.0
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        self.passed, self.count, self.violations = bool(self.passed), int(self.count), int(self.violations)
        self.margin = float(self.margin)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: n={self.count} violations={self.violations} margin={self.margin:.3e} ({self.seconds:.2f}s)"

    def to_dict(self) -> dict:
        d = asdict(self)
        if not math.isfinite(d["margin"]):
            d["margin"] = None
        return d


def random_spd(rng: np.random.Generator, n: int, log_spread: float = 2.0) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    lam = np.exp(rng.uniform(-log_spread, log_spread, n))
    A = (q * lam) @ q.T
    return 0.5 * (A + A.T)


def central_diff(fn, x0: float, h: float = 1e-5) -> float:
    return (fn(x0 + h) - fn(x0 - h)) / (2 * h)


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - t0
        return res

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@_timed
def check_power_inequality(n_samples: int = 10_000, seed: int = 0, slack: float = 1e-9) -> CheckResult:
    """(w'A^a w)^2 <= (w'A^(a+b) w)(w'A^(a-b) w) on random SPD A, a, b in -2..2."""
    rng = np.random.default_rng(seed)
    worst, bad = math.inf, 0
    for _ in range(n_samples):
        n = int(rng.integers(2, 6))
        A = random_spd(rng, n)
        w = rng.standard_normal(n)
        a, b = (int(v) for v in rng.integers(-2, 3, size=2))
        lhs, rhs = theory.lemma1_check(w, A, a, b)
        m = (rhs * (1 + slack) - lhs) / max(abs(rhs), 1e-300)
        worst = min(worst, m)
        bad += lhs > rhs * (1 + slack)
    return CheckResult("power_inequality_sweep", bad == 0, n_samples, bad, worst)


@_timed
def check_counterexample() -> CheckResult:
    lhs, rhs = theory.lemma1_check([1.0, 3.0], np.diag([1.0, -2.0]), 0, 1)
    exact = abs(lhs - 100.0) <= 1e-12 and abs(rhs - 59.5) <= 1e-12
    ok = exact and lhs > rhs
    return CheckResult("power_inequality_counterexample", ok, 1, 0 if ok else 1, rhs - lhs, details={"lhs": lhs, "rhs": rhs})


@_timed
def check_orthogonal_growth(n_samples: int = 1000, seed: int = 1, tol: float = 1e-8) -> CheckResult:
    """v_perp . grad ||grad||^2 >= -tol * ||grad||^2 ||H|| on random convex quadratics."""
    rng = np.random.default_rng(seed)
    worst, bad = math.inf, 0
    for _ in range(n_samples):
        n = int(rng.integers(2, 6))
        A = random_spd(rng, n)
        x = rng.standard_normal(n)
        g, H = 2.0 * A @ x, 2.0 * A
        dec = theory.newton_decompose(g, H)
        val = theory.prop1_directional_derivative(g, H, dec.v_perp)
        scale = theory.prop1_scale(g, H)
        worst = min(worst, val / scale)
        bad += val < -tol * scale
    g, H = np.array([2.0, 8.0]), np.diag([2.0, 8.0])
    hand = theory.prop1_directional_derivative(g, H, theory.newton_decompose(g, H).v_perp)
    hand_ok = abs(hand - 288.0 / 17.0) <= 1e-10
    return CheckResult("orthogonal_growth_sweep", bad == 0 and hand_ok, n_samples, bad, worst, details={"hand_value": hand, "hand_ok": hand_ok})


def random_quadratic_spec(rng: np.random.Generator) -> theory.QuadraticSpec:
    return theory.QuadraticSpec.from_A(random_spd(rng, 2, 1.5))


@_timed
def check_theta_closed_form(n_samples: int = 1000, seed: int = 2, tol: float = 1e-6) -> CheckResult:
    """Closed-form rotation gradient at theta=0 against a central difference."""
    rng = np.random.default_rng(seed)
    worst_err, bad = 0.0, 0
    for _ in range(n_samples):
        spec = random_quadratic_spec(rng)
        alpha = rng.uniform(0.05, 1.0) / spec.smoothness
        x = rng.standard_normal(2)
        cf = theory.theta_grad_closed_form(spec, alpha, x)
        fd = central_diff(lambda th: theory.composed_step_value(spec, alpha, x, th), 0.0)
        err = abs(cf - fd) / (1.0 + abs(fd))
        worst_err = max(worst_err, err)
        bad += err > tol
    worked = theory.theta_grad_closed_form(theory.QuadraticSpec(np.diag([1.0, 2.0])), 0.1, [1.0, 1.0])
    worked_ok = abs(worked - (-2.4)) <= 1e-9
    return CheckResult("theta_closed_form", bad == 0 and worked_ok, n_samples, bad, tol - worst_err, details={"worked_value": worked, "max_rel_err": worst_err})


@_timed
def check_halfway_claim(n_orbits: int = 100, grid: int = 720, seed: int = 3) -> CheckResult:
    """|d/dtheta| over positions of Bx on an orbit peaks 45 degrees between the axes."""
    rng = np.random.default_rng(seed)
    cell = 2 * math.pi / grid
    bad, worst = 0, math.inf
    for _ in range(n_orbits):
        lam = np.sort(np.exp(rng.uniform(-1.5, 1.5, 2)))
        if lam[1] / lam[0] < 1.01:
            lam[1] *= 2.0
        spec = theory.QuadraticSpec(np.diag(np.sqrt(lam)))
        alpha = rng.uniform(0.05, 1.0) / spec.smoothness
        r = math.exp(rng.uniform(-1, 1))
        phis = np.arange(grid) * cell
        vals = []
        for phi in phis:
            bx = r * np.array([math.cos(phi), math.sin(phi)])
            vals.append(abs(theory.theta_grad_closed_form(spec, alpha, np.linalg.solve(spec.B, bx))))
        phi_star = phis[int(np.argmax(vals))]
        off = abs(((phi_star - math.pi / 4) + math.pi / 4) % (math.pi / 2) - math.pi / 4)
        worst = min(worst, cell - off)
        bad += off > cell + 1e-12
    return CheckResult("halfway_claim", bad == 0, n_orbits, bad, worst)


def _random_task(rng: np.random.Generator) -> Task:
    fam = ("ellipse", "rosenbrock")[int(rng.integers(2))]
    mode = ("fixed", "variable")[int(rng.integers(2))]
    return sample_task(TaskDistribution(fam, mode), rng)


@_timed
def check_teleport_invariance(n_samples: int = 10_000, n_oracle: int = 1000, n_diag: int = 200, seed: int = 4) -> CheckResult:
    """f(g_theta x) = f(x); oracle never below theta=0; orbit max 2 sigma_max ||h||."""
    rng = np.random.default_rng(seed)
    worst, bad = math.inf, 0
    for _ in range(n_samples):
        task = _random_task(rng)
        x = rng.standard_normal(2)
        theta = rng.uniform(-math.pi, math.pi)
        fx = eval_f(task, x)
        fy = eval_f(task, symmetry.act(task, theta, x))
        tol = 1e-8 * (1 + abs(fx))
        worst = min(worst, (tol - abs(fy - fx)) / (1 + abs(fx)))
        bad += int(abs(fy - fx) > tol)
    oracle_bad = 0
    for _ in range(n_oracle):
        task = _random_task(rng)
        x = rng.standard_normal(2)
        _, g = symmetry.teleport_oracle(task, x)
        oracle_bad += int(g < np.linalg.norm(grad_f(task, x)) - 1e-9)
    diag_bad, diag_err = 0, 0.0
    for _ in range(n_diag):
        A = np.diag(np.exp(rng.uniform(-1.5, 1.5, 2)) * rng.choice([-1.0, 1.0], 2))
        task = Task(AffineMap2(A, (0.0, 0.0)), (0.0, 0.0))
        x = rng.standard_normal(2)
        _, g = symmetry.teleport_oracle(task, x)
        expected = 2.0 * np.abs(np.diag(A)).max() * np.linalg.norm(A @ x)
        err = abs(g - expected) / (1 + expected)
        diag_err = max(diag_err, err)
        diag_bad += int(err > 1e-6)
    ok = bad == 0 and oracle_bad == 0 and diag_bad == 0
    return CheckResult(
        "teleport_invariance",
        ok,
        n_samples,
        bad + oracle_bad + diag_bad,
        worst,
        details={"invariance_violations": bad, "oracle_violations": oracle_bad, "orbit_max_violations": diag_bad, "orbit_max_err": float(diag_err)},
    )


@_timed
def check_descent_lemma(n_tasks: int = 100, steps: int = 50, seed: int = 5) -> CheckResult:
    """Every GD step at alpha=1/L satisfies f+ <= f - alpha/2 ||g||^2 + 1e-10."""
    rng = np.random.default_rng(seed)
    worst, bad, count = math.inf, 0, 0
    for _ in range(n_tasks):
        task = sample_task(TaskDistribution("ellipse", "variable"), rng)
        alpha = 1.0 / task.smoothness()
        traj = optim.run_gd(task, None, alpha, steps)
        for a, b in zip(traj.records, traj.records[1:]):
            bound = a.f - 0.5 * alpha * a.grad_norm**2 + 1e-10
            worst = min(worst, bound - b.f)
            bad += b.f > bound
            count += 1
    return CheckResult("descent_lemma", bad == 0, count, bad, worst)


@_timed
def check_online_rotation(n_seeds: int = 50, steps: int = 50, beta: float = 0.05, seed: int = 6) -> CheckResult:
    """Learned rotation beats plain GD and turns toward the major axis, each in >= 90% of seeds."""
    spec = theory.QuadraticSpec(np.diag([0.5, 3.0]))
    task = Task(AffineMap2(np.diag([0.5, 3.0]), (0.0, 0.0)), (0.0, 0.0))
    alpha = 1.0 / spec.smoothness
    wins = rot = 0
    ratios = []
    for s in range(n_seeds):
        x0 = np.random.default_rng([seed, s]).standard_normal(2)
        tr = theory.run_alg2(spec, x0, 0.0, alpha, beta, steps)
        gd = optim.run_gd(task, x0, alpha, steps)
        wins += tr.final_f < gd.final_f
        rot += theory.rotates_toward_major_axis(spec, tr, first=10)
        ratios.append(tr.final_f / max(gd.final_f, 1e-300))
    win_rate, rot_rate = wins / n_seeds, rot / n_seeds
    ok = win_rate >= 0.9 and rot_rate >= 0.9
    return CheckResult(
        "online_rotation_efficacy",
        ok,
        n_seeds,
        n_seeds - min(wins, rot),
        min(win_rate, rot_rate) - 0.9,
        details={"win_rate": win_rate, "rotation_rate": rot_rate, "median_final_ratio": float(np.median(ratios))},
    )


def run_all(quick: bool = False, seed: int = 0) -> list[CheckResult]:
    k = 10 if quick else 1
    return [
        check_power_inequality(10_000 // k, seed=seed),
        check_counterexample(),
        check_orthogonal_growth(1000 // k, seed=seed + 1),
        check_theta_closed_form(1000 // k, seed=seed + 2),
        check_halfway_claim(100 // k, seed=seed + 3),
        check_teleport_invariance(10_000 // k, 1000 // k, 200 // k, seed=seed + 4),
        check_descent_lemma(100 // k, seed=seed + 5),
        check_online_rotation(50 if not quick else 20, seed=seed + 6),
    ]
