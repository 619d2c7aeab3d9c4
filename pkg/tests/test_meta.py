import math

import numpy as np
import pytest

from teleport_l2o import meta
from teleport_l2o.meta import (
    CheckpointError,
    ConfigError,
    L2OConfig,
    LstmParams,
    MetaState,
    MomentumSGD,
    dumps_checkpoint,
    evaluate,
    heldout_seeds,
    init_nets,
    inner_update,
    loads_checkpoint,
    lstm_step,
    meta_gradient,
    meta_loss,
    softplus_inverse,
    train,
    training_seeds,
)
from teleport_l2o.tasks import PRESETS, Task, TaskDistribution, task_from_seed

FIXED = TaskDistribution("ellipse", "fixed")


def perturbed_nets(cfg, seed=0, scale=0.3):
    """Initial nets with every weight jittered, so all parameters influence the loss."""
    rng = np.random.default_rng(seed)
    nets = init_nets(cfg, rng)
    for p in nets:
        p.flat += scale * rng.standard_normal(p.size)
    return nets


def fd_rel_errors(nets, cfg, task, steps, n_params=20, eps=1e-4, seed=1):
    _, grads = meta_gradient(nets, cfg, task, steps)
    rng = np.random.default_rng(seed)
    sizes = [p.size for p in nets]
    picks = rng.choice(sum(sizes), size=n_params, replace=False)
    errs = []
    for k in picks:
        i = 0
        while k >= sizes[i]:
            k -= sizes[i]
            i += 1
        orig = nets[i].flat[k]
        nets[i].flat[k] = orig + eps
        up = meta_loss(nets, cfg, task, steps)
        nets[i].flat[k] = orig - eps
        dn = meta_loss(nets, cfg, task, steps)
        nets[i].flat[k] = orig
        fd = (up - dn) / (2 * eps)
        ad = grads[i][k]
        errs.append(abs(ad - fd) / max(abs(ad), abs(fd), 1e-6))
    return errs


@pytest.mark.parametrize("variant", meta.VARIANTS)
@pytest.mark.parametrize("preprocess", ["raw", "log"])
def test_meta_gradient_matches_finite_differences(variant, preprocess):
    cfg = L2OConfig(variant=variant, hidden_dim=6, epochs=3, unroll=3, runs=1, preprocess=preprocess, teleport_steps=[1, 3])
    task = Task(PRESETS["ellipse"], (0.7, -0.4))
    nets = perturbed_nets(cfg)
    assert max(fd_rel_errors(nets, cfg, task, 3)) <= 1e-4


def test_meta_gradient_on_rosenbrock():
    cfg = L2OConfig(variant="teleport_momentum", hidden_dim=4, epochs=3, unroll=3, runs=1)
    task = task_from_seed(TaskDistribution("rosenbrock", "variable"), 5)
    nets = perturbed_nets(cfg, scale=0.1)
    assert max(fd_rel_errors(nets, cfg, task, 3)) <= 1e-4


def test_untrained_heads_are_inert():
    cfg = L2OConfig(variant="teleport_momentum", hidden_dim=8, inner_lr=0.05)
    nets = init_nets(cfg, np.random.default_rng(0))
    out, state = lstm_step(nets[0], [0.3, -0.2], MetaState.zeros(8))
    assert out["lr"][0] == pytest.approx(0.05, rel=1e-12)
    out2, _ = lstm_step(nets[1], [0.3, -0.2], MetaState.zeros(8))
    assert out2["beta"][0] == 0.5
    assert out2["theta"][0] == 0.0
    assert state.step == 1


def test_untrained_teleport_variant_tracks_vanilla_exactly():
    task = task_from_seed(FIXED, 3)
    van = L2OConfig(variant="vanilla", hidden_dim=8)
    tel = L2OConfig(variant="teleport", hidden_dim=8)
    n_van = init_nets(van, np.random.default_rng(0))
    n_tel = init_nets(tel, np.random.default_rng(0))
    a = evaluate(n_van, van, [task], 10)[0]
    b = evaluate(n_tel, tel, [task], 10)[0]
    assert np.array_equal(a.xs, b.xs)


def test_inner_update_matches_unrolled_step():
    cfg = L2OConfig(variant="teleport", hidden_dim=5, epochs=4, unroll=4)
    nets = perturbed_nets(cfg)
    task = task_from_seed(FIXED, 0)
    traj = evaluate(nets, cfg, [task], 1)[0]
    x1, states, v, theta = inner_update("teleport", nets, task, task.x0, [MetaState.zeros(5)], np.zeros(2), 0.05, t=1, cfg=cfg)
    assert np.allclose(x1, traj.records[1].x, atol=1e-14)
    assert theta is not None and traj.records[1].theta == pytest.approx(theta)


def test_teleport_schedule_limits_rotations():
    cfg = L2OConfig(variant="teleport", hidden_dim=5, epochs=6, unroll=3, teleport_steps=[2, 5])
    traj = evaluate(perturbed_nets(cfg), cfg, [task_from_seed(FIXED, 1)], 6)[0]
    rotated = [r.step for r in traj.records if r.theta is not None]
    assert rotated == [2, 5]
    for r in traj.records:
        if r.f_pre_teleport is not None:
            assert abs(r.f - r.f_pre_teleport) <= 1e-8 * (1 + r.f)


def test_config_validation():
    with pytest.raises(ConfigError):
        L2OConfig(variant="adam")
    with pytest.raises(ConfigError):
        L2OConfig(epochs=40, unroll=7)
    with pytest.raises(ConfigError):
        L2OConfig(epochs=4, unroll=2, weights=[1, 1, 0, 1])
    with pytest.raises(ConfigError):
        L2OConfig(epochs=4, unroll=2, teleport_steps=[5])
    with pytest.raises(ConfigError):
        L2OConfig.from_dict({"hidden": 3})
    cfg = L2OConfig(epochs=4, unroll=2, weights=[1, 2, 3, 4], meta_lr=1e-3)
    assert cfg.meta_lr == (1e-3, 1e-3)
    assert cfg.weight(3) == 3.0 and cfg.weight(10) == 1.0
    assert L2OConfig.from_dict(cfg.to_dict()) == cfg


def test_lstm_params_layout():
    p = LstmParams.init(2, 4, ("update", "theta"), np.random.default_rng(0))
    # two layers of 4H x (d + H) weights plus biases, then the heads
    expected = 16 * 6 + 16 + 16 * 8 + 16 + 2 * 4 + 2 + 1 * 4 + 1
    assert p.size == expected
    assert np.all(p.view("head_update_W") == 0.0)
    assert np.all(np.abs(p.view("W0")) <= 0.5)
    with pytest.raises(ValueError):
        LstmParams(2, 4, ("update",), np.zeros(3))
    with pytest.raises(ValueError):
        LstmParams.init(2, 4, ("momentum",), np.random.default_rng(0))


def test_softplus_inverse():
    for y in (1e-3, 0.05, 1.0, 30.0):
        x = softplus_inverse(y)
        assert math.log1p(math.exp(x)) == pytest.approx(y, rel=1e-12)
    with pytest.raises(ValueError):
        softplus_inverse(0.0)


def test_momentum_sgd_clips_and_skips():
    p = LstmParams.init(2, 2, ("update",), np.random.default_rng(0))
    before = p.flat.copy()
    opt = MomentumSGD([0.1], momentum=0.9, clip_norm=1.0)
    g = np.zeros(p.size)
    g[0] = 10.0
    assert opt.step([p], [g])
    assert p.flat[0] == pytest.approx(before[0] - 0.1)  # clipped to unit norm
    bad = g.copy()
    bad[1] = math.nan
    snapshot = p.flat.copy()
    assert not opt.step([p], [bad])
    assert np.array_equal(p.flat, snapshot)


def test_seed_sets_are_disjoint():
    cfg = L2OConfig(runs=500)
    assert not set(training_seeds(cfg)) & set(heldout_seeds(100))
    assert training_seeds(cfg) == training_seeds(L2OConfig(runs=500))


def test_short_training_is_deterministic_and_checkpoints_round_trip():
    cfg = L2OConfig(variant="teleport_momentum", hidden_dim=6, runs=4, epochs=4, unroll=2)
    a = train(cfg, FIXED)
    b = train(cfg, FIXED)
    assert all(np.array_equal(x.flat, y.flat) for x, y in zip(a.nets, b.nets))
    assert len(a.curve) == 4 and all(math.isfinite(v) for v in a.curve)
    assert a.meta_steps == 8
    nets, cfg2 = loads_checkpoint(dumps_checkpoint(a.nets, cfg))
    assert cfg2 == cfg
    assert all(np.array_equal(x.flat, y.flat) for x, y in zip(nets, a.nets))
    assert a.curve_csv().splitlines()[0] == "run,meta_loss"


def test_checkpoint_rejects_bad_input():
    cfg = L2OConfig(hidden_dim=3)
    text = dumps_checkpoint(init_nets(cfg, np.random.default_rng(0)), cfg)
    with pytest.raises(CheckpointError):
        loads_checkpoint("{not json")
    with pytest.raises(CheckpointError):
        loads_checkpoint(text.replace('"version": 1', '"version": 2'))
    with pytest.raises(CheckpointError):
        loads_checkpoint(text.replace('"hidden_dim": 3', '"hidden_dim": 4'))


def test_diverging_task_is_reported_not_raised():
    cfg = L2OConfig(variant="vanilla", hidden_dim=4, update_scale=5.0)
    nets = perturbed_nets(cfg, scale=3.0)
    # a steep variable task with a huge step bound
    task = Task(PRESETS["rosenbrock"], (3.0, -3.0))
    traj = evaluate(nets, cfg, [task], 200)[0]
    assert traj.diverged or len(traj) == 201
