import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from teleport_l2o import autodiff as ad
from teleport_l2o.tasks import (
    DET_MIN,
    PRESETS,
    AffineMap2,
    RosenbrockMap,
    SamplingError,
    Task,
    TaskDistribution,
    eval_f,
    f_expr,
    grad_f,
    h_forward,
    h_inverse,
    hess_f,
    preset_task,
    sample_task,
    task_from_seed,
    tasks_from_seeds,
)

coord = st.floats(-3, 3, allow_nan=False)
coef = st.floats(-2, 2, allow_nan=False).filter(lambda v: abs(v) > 0.2)


@st.composite
def tasks(draw):
    if draw(st.booleans()):
        A = ((draw(coef), draw(coord)), (draw(coord), draw(coef)))
        if abs(A[0][0] * A[1][1] - A[0][1] * A[1][0]) < 0.1:
            A = ((A[0][0], 0.0), (0.0, A[1][1]))
        params = AffineMap2(A, (draw(coord), draw(coord)))
    else:
        params = RosenbrockMap(draw(coef), draw(coord), draw(coef), draw(coord), draw(coord), draw(coord))
    return Task(params, (draw(coord), draw(coord)))


# hand-evaluated reference values
def test_booth_values():
    t = preset_task("booth")
    assert eval_f(t, (0, 0)) == 74.0
    assert np.allclose(t.minimizer(), (1.0, 3.0))
    assert eval_f(t, (1, 3)) == 0.0
    # grad at origin: 2 A^T b = 2 * (1*-7 + 2*-5, 2*-7 + 1*-5)
    assert grad_f(t, (0, 0)).tolist() == [-34.0, -38.0]


def test_canonical_rosenbrock_values():
    t = preset_task("rosenbrock")
    assert eval_f(t, (1, 1)) == 0.0
    assert eval_f(t, (0, 0)) == 1.0
    assert eval_f(t, (-1, 2)) == 104.0
    assert np.allclose(t.minimizer(), (1.0, 1.0))
    assert grad_f(t, (0, 0)).tolist() == [-2.0, 0.0]
    assert np.allclose(hess_f(t, (1, 1)), [[802.0, -400.0], [-400.0, 200.0]])


def test_fixed_ellipse_smoothness():
    t = preset_task("ellipse")
    assert t.smoothness() == 18.0  # 2 * 3^2


def test_types_reject_non_bijective_maps():
    with pytest.raises(ValueError):
        AffineMap2(((1, 2), (2, 4)), (0, 0))
    with pytest.raises(ValueError):
        RosenbrockMap(0.0, 1, 1, 1, 0, 0)
    with pytest.raises(ValueError):
        RosenbrockMap(1.0, 1, 0.0, 1, 0, 0)
    with pytest.raises(ValueError):
        Task(PRESETS["booth"], (0.0, math.nan))


@given(tasks(), coord, coord)
def test_h_inverse_round_trip(task, u, v):
    x = np.array([u, v])
    back = h_inverse(task, h_forward(task, x))
    assert np.allclose(back, x, atol=1e-8 * (1 + np.abs(h_forward(task, x)).max()) * 1e3)


@given(tasks(), coord, coord)
def test_gradient_matches_autodiff(task, u, v):
    tape = ad.Tape()
    x1, x2 = ad.Var(tape, u), ad.Var(tape, v)
    adj = tape.backward(f_expr(task.params, x1, x2).id)
    g = grad_f(task, (u, v))
    assert np.allclose([adj[x1.id], adj[x2.id]], g, rtol=1e-12, atol=1e-12 * (1 + np.abs(g).max()))


@given(tasks(), coord, coord)
def test_hessian_matches_gradient_differences(task, u, v):
    H = hess_f(task, (u, v))
    eps = 1e-6
    cols = [(grad_f(task, (u + eps, v)) - grad_f(task, (u - eps, v))) / (2 * eps), (grad_f(task, (u, v + eps)) - grad_f(task, (u, v - eps))) / (2 * eps)]
    fd = np.column_stack(cols)
    assert np.allclose(H, fd, rtol=1e-6, atol=1e-5 * (1 + np.abs(H).max()))
    assert np.allclose(H, H.T)


@given(tasks())
def test_minimizer_has_zero_loss(task):
    assert eval_f(task, task.minimizer()) == pytest.approx(0.0, abs=1e-12 * (1 + np.abs(task.minimizer()).max() ** 4))


def test_record_round_trip():
    for name in PRESETS:
        t = Task(PRESETS[name], (0.25, -1.5), seed=7)
        assert Task.from_json(t.to_json()) == t
    with pytest.raises(ValueError):
        Task.from_record({**t.to_record(), "version": 99})


def test_fixed_mode_varies_only_x0():
    dist = TaskDistribution("ellipse", "fixed")
    a, b = task_from_seed(dist, 1), task_from_seed(dist, 2)
    assert a.params == b.params == PRESETS["ellipse"]
    assert a.x0 != b.x0
    assert TaskDistribution("rosenbrock").fixed_params == PRESETS["rosenbrock_fixed"]
    assert TaskDistribution("ellipse", preset="booth").fixed_params == PRESETS["booth"]


def test_sampling_is_seeded():
    dist = TaskDistribution("rosenbrock", "variable")
    assert tasks_from_seeds(dist, [3, 4]) == tasks_from_seeds(dist, [3, 4])
    assert task_from_seed(dist, 3) != task_from_seed(dist, 4)


def test_variable_mode_respects_rejection_threshold():
    rng = np.random.default_rng(0)
    for _ in range(500):
        t = sample_task(TaskDistribution("ellipse", "variable"), rng)
        assert abs(t.params.det) >= DET_MIN
        r = sample_task(TaskDistribution("rosenbrock", "variable"), rng)
        assert min(abs(r.params.a), abs(r.params.c1)) >= DET_MIN


def test_x0_is_standard_normal():
    xs = np.array([task_from_seed(TaskDistribution("ellipse"), s).x0 for s in range(4000)])
    assert abs(xs.mean()) < 0.05
    assert abs(xs.std() - 1.0) < 0.05


class _ZeroRng:
    def standard_normal(self, n):
        return np.zeros(n)


@pytest.mark.parametrize("family", ["ellipse", "rosenbrock"])
def test_sampler_gives_up_after_bounded_attempts(family):
    with pytest.raises(SamplingError):
        sample_task(TaskDistribution(family, "variable"), _ZeroRng())


def test_distribution_validation():
    with pytest.raises(ValueError):
        TaskDistribution("booth")
    with pytest.raises(ValueError):
        TaskDistribution("ellipse", "sometimes")
    with pytest.raises(ValueError):
        TaskDistribution("rosenbrock", preset="booth")
    with pytest.raises(ValueError):
        TaskDistribution.from_dict({"family": "ellipse", "colour": 1})
    d = TaskDistribution("ellipse", "variable", reject_near_singular=False)
    assert TaskDistribution.from_dict(d.to_dict()) == d
