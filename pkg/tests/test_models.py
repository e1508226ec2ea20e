import numpy as np
import pytest

from calibrl.errors import TrainingDivergenceError
from calibrl.mdp import ReplayRecord
from calibrl.models import ModelConfig, RunningStats, WorldModel

SMALL = dict(hidden=16, head_hidden=(16, 16))


def make_records(n, d=4, seed=0, fixed_point=False, reward=None):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        t = int(rng.integers(1, 4)) if fixed_point else int(rng.integers(0, 4))
        y = rng.uniform(0, 1, d)
        Y = np.tile(y, (t + 1, 1)) if fixed_point else rng.uniform(0, 1, (t + 1, d))
        nxt = y if fixed_point else rng.uniform(0, 1, d)
        r = float(rng.normal()) if reward is None else reward
        out.append(ReplayRecord(i, t, 0, "intrinsic", Y, rng.uniform(-0.015, 0.015, (t, 36)),
                                rng.uniform(-0.015, 0.015, 36), nxt, r))
    return out


def zero_model(d=4):
    m = WorldModel(ModelConfig(status_dim=d, **SMALL))
    m.reward_params = {k: np.zeros_like(v) for k, v in m.reward_params.items()}
    m.dynamics_params = {k: np.zeros_like(v) for k, v in m.dynamics_params.items()}
    return m


def test_zero_network_outputs_zero():
    m = zero_model()
    rec = make_records(1, seed=3)[0]
    assert m.reward_forward(rec.actions, rec.statuses, rec.action) == 0.0
    np.testing.assert_array_equal(m.dynamics_forward(rec.actions, rec.statuses, rec.action), np.zeros(4))
    g = m.grad_reward_wrt_actions(rec.actions, rec.statuses, np.zeros((3, 36)))
    assert g.shape == (3, 36) and np.all(g == 0)


def test_forward_is_pure_and_deterministic():
    m = WorldModel(ModelConfig(**SMALL))
    rec = make_records(1, seed=4)[0]
    before = {k: v.copy() for k, v in m.reward_params.items()}
    a = m.reward_forward(rec.actions, rec.statuses, rec.action)
    m.objective_and_grad(rec.actions, rec.statuses, np.zeros((2, 36)))
    assert m.reward_forward(rec.actions, rec.statuses, rec.action) == a
    assert all(np.array_equal(before[k], m.reward_params[k]) for k in before)


def test_history_shape_checked():
    m = WorldModel(ModelConfig(**SMALL))
    with pytest.raises(ValueError):
        m.reward_forward(np.zeros((2, 36)), np.zeros((2, 4)), np.zeros(36))
    with pytest.raises(ValueError):
        m.objective_and_grad(np.zeros((0, 36)), np.zeros((1, 4)), np.zeros((0, 36)))


def test_output_dimensions():
    m = WorldModel(ModelConfig(**SMALL))
    assert m.dynamics_forward(np.zeros((0, 36)), np.zeros((1, 4)), np.zeros(36)).shape == (4,)
    m6 = WorldModel(ModelConfig(status_dim=6, **SMALL))
    assert m6.dynamics_forward(np.zeros((1, 36)), np.zeros((2, 6)), np.zeros(36)).shape == (6,)


def test_default_learning_rates():
    c = ModelConfig()
    assert (c.lr_reward, c.lr_dynamics, c.hidden, c.head_hidden) == (1e-4, 1e-4, 64, (64, 64))


def test_single_record_loss_is_squared_error():
    m = WorldModel(ModelConfig(**SMALL))
    rec = make_records(1, seed=5)[0]
    r_hat = m.reward_forward(rec.actions, rec.statuses, rec.action)
    y_hat = m.dynamics_forward(rec.actions, rec.statuses, rec.action)
    ed, er = m.train_step([rec])
    assert er == pytest.approx((rec.reward - r_hat) ** 2, rel=1e-12)
    assert ed == pytest.approx(np.sum((rec.next_status - y_hat) ** 2), rel=1e-12)


def test_perfect_targets_give_zero_loss_and_no_update():
    m = WorldModel(ModelConfig(**SMALL))
    recs = []
    for r in make_records(5, seed=6):
        recs.append(ReplayRecord(r.episode, r.step, 0, "intrinsic", r.statuses, r.actions, r.action,
                                 m.dynamics_forward(r.actions, r.statuses, r.action),
                                 m.reward_forward(r.actions, r.statuses, r.action)))
    before = ({k: v.copy() for k, v in m.reward_params.items()}, {k: v.copy() for k, v in m.dynamics_params.items()})
    ed, er = m.train_step(recs)
    assert ed == pytest.approx(0.0, abs=1e-24) and er == pytest.approx(0.0, abs=1e-24)
    for old, new in zip(before, (m.reward_params, m.dynamics_params)):
        for k in old:
            np.testing.assert_allclose(new[k], old[k], atol=1e-14)


def test_loss_decreases_over_500_steps():
    m = WorldModel(ModelConfig())
    recs = make_records(16, seed=7)
    m.update_normalizer(recs)
    prev = None
    for _ in range(500):
        ed, er = m.train_step(recs)
        if prev is not None:
            assert ed <= prev[0] + 1e-12 and er <= prev[1] + 1e-12
        prev = (ed, er)


def test_constant_reward_regression():
    recs = make_records(16, seed=8, reward=0.3)
    m = WorldModel(ModelConfig(**SMALL))
    m.update_normalizer(recs)
    for _ in range(300):
        m.train_step(recs, lr_reward=0.3, lr_dynamics=0.05)
    for r in recs:
        assert m.reward_forward(r.actions, r.statuses, r.action) == pytest.approx(0.3, abs=0.01)


def test_fixed_point_dynamics():
    recs = make_records(32, seed=10, fixed_point=True)
    m = WorldModel(ModelConfig(**SMALL))
    m.update_normalizer(recs)
    for _ in range(1500):
        m.train_step(recs, lr_reward=0.1, lr_dynamics=0.1)
    pred = np.array([m.dynamics_forward(r.actions, r.statuses, r.action) for r in recs])
    target = np.array([r.statuses[-1] for r in recs])
    assert np.sqrt(np.mean((pred - target) ** 2)) < 0.05


def test_order_sensitive_encoder():
    rng = np.random.default_rng(11)
    m = WorldModel(ModelConfig(**SMALL))
    m.norm.update(a_sd=np.full(36, 0.01))
    differs = 0
    for _ in range(100):
        A = rng.uniform(-0.015, 0.015, (3, 36))
        Y = rng.uniform(0, 1, (4, 4))
        a = rng.uniform(-0.015, 0.015, 36)
        perm = [2, 0, 1]
        Yp = np.vstack([Y[:1], Y[1:][perm]])
        differs += m.reward_forward(A, Y, a) != m.reward_forward(A[perm], Yp, a)
    assert differs >= 99


def test_divergence_raises():
    m = WorldModel(ModelConfig(**SMALL))
    rec = make_records(1, seed=12)[0]
    bad = ReplayRecord(0, rec.step, 0, "intrinsic", rec.statuses, rec.actions, rec.action, rec.next_status, float("nan"))
    with pytest.raises(TrainingDivergenceError):
        m.train_step([bad])
    with pytest.raises(ValueError):
        m.train_step([])


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(13)
    m = WorldModel(ModelConfig(hidden=8, head_hidden=(8, 8), seed=1))
    m.norm.update(a_sd=np.full(36, 0.01), r_mu=np.array([0.3]), r_sd=np.array([2.0]))
    A, Y = rng.uniform(-0.015, 0.015, (1, 36)), rng.uniform(0, 1, (2, 4))
    F = rng.uniform(-0.015, 0.015, (2, 36))
    _, g = m.objective_and_grad(A, Y, F)
    fd = np.zeros_like(F)
    for idx in np.ndindex(F.shape):
        Fp, Fm = F.copy(), F.copy()
        Fp[idx] += 1e-5
        Fm[idx] -= 1e-5
        fd[idx] = (m.objective_and_grad(A, Y, Fp, False)[0] - m.objective_and_grad(A, Y, Fm, False)[0]) / 2e-5
    assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-4


def test_batched_objective_matches_single():
    rng = np.random.default_rng(14)
    m = WorldModel(ModelConfig(**SMALL))
    A, Y = rng.uniform(-0.015, 0.015, (2, 36)), rng.uniform(0, 1, (3, 4))
    F = rng.uniform(-0.015, 0.015, (5, 2, 36))
    v, g = m.objective_and_grad(A, Y, F)
    for p in range(5):
        vs, gs = m.objective_and_grad(A, Y, F[p])
        assert v[p] == pytest.approx(vs, rel=1e-12)
        np.testing.assert_allclose(g[p], gs, rtol=1e-10, atol=1e-14)


def test_save_load_round_trip(tmp_path):
    m = WorldModel(ModelConfig(**SMALL, seed=3))
    recs = make_records(8, seed=15)
    m.update_normalizer(recs)
    m.train_step(recs)
    m.save(tmp_path)
    back = WorldModel.load(tmp_path)
    assert back.config == m.config
    r = recs[0]
    assert back.reward_forward(r.actions, r.statuses, r.action) == m.reward_forward(r.actions, r.statuses, r.action)
    for k in m.norm:
        np.testing.assert_array_equal(back.norm[k], m.norm[k])


def test_running_stats():
    s = RunningStats(2)
    np.testing.assert_array_equal(s.std, [1.0, 1.0])
    s.update(np.array([[1.0, 5.0], [3.0, 5.0]]))
    np.testing.assert_allclose(s.mean, [2.0, 5.0])
    np.testing.assert_allclose(s.std, [1.0, 1.0])  # second channel is constant: unscaled
