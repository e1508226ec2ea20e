import numpy as np
import pytest

from calibrl import agent
from calibrl.agent import (
    AgentConfig,
    EvalReport,
    EvalRow,
    Policy,
    ReplayDataset,
    collect_random,
    episode_seed,
    evaluate,
    format_log,
    load_checkpoint,
    load_handcrafted,
    named_rng,
    new_training_state,
    phase_env,
    run_training,
    save_checkpoint,
    train,
)
from calibrl.errors import TrainingDivergenceError
from calibrl.mdp import CalibrationEnv, EnvConfig
from calibrl.models import ModelConfig
from calibrl.pso import PsoConfig
from calibrl.trajectory import clip_and_scale

TINY_MODEL = ModelConfig(hidden=8, head_hidden=(8, 8))
TINY_PSO = PsoConfig(n_particles=6, memory_size=2, pool=2, iterations=1)


def tiny_state(mode="intrinsic", seed=0):
    return new_training_state(mode, TINY_MODEL, TINY_PSO, seed)


def test_episode_seed():
    assert episode_seed(0, "train", 3) == episode_seed(0, "train", 3)
    assert len({episode_seed(0, "train", i) for i in range(100)}) == 100
    assert episode_seed(0, "train", 3) != episode_seed(0, "collect", 3)
    assert episode_seed(1, "train", 3) != episode_seed(0, "train", 3)


@pytest.mark.parametrize("mode,n", [("intrinsic", 4), ("extrinsic", 3)])
def test_collect_one_episode(mode, n):
    ds = collect_random(phase_env(EnvConfig(mode=mode), False, True), 1, ReplayDataset(), named_rng(0, "r"))
    assert len(ds) == n
    assert [r.step for r in ds] == list(range(n))
    assert all(r.episode == 0 for r in ds)


def test_collect_is_deterministic():
    env = CalibrationEnv()
    a = collect_random(env, 2, ReplayDataset(), named_rng(5, "r"), 5).to_jsonl()
    b = collect_random(env, 2, ReplayDataset(), named_rng(5, "r"), 5).to_jsonl()
    assert a == b


def test_collect_requires_episodes():
    with pytest.raises(ValueError):
        collect_random(CalibrationEnv(), 0, ReplayDataset(), named_rng(0, "r"))


def test_collect_skips_failing_episodes(monkeypatch):
    env = CalibrationEnv()
    real = env.step
    calls = {"n": 0}

    def flaky(state, action):
        calls["n"] += 1
        if calls["n"] == 2:
            raise np.linalg.LinAlgError("singular")
        return real(state, action)

    monkeypatch.setattr(env, "step", flaky)
    ds = collect_random(env, 2, ReplayDataset(), named_rng(0, "r"))
    assert len(ds) == 4


def test_dataset_append_order_and_round_trip(tmp_path):
    ds = collect_random(CalibrationEnv(), 1, ReplayDataset(), named_rng(0, "r"))
    with pytest.raises(ValueError):
        ds.append(ds[0])
    ds.save(tmp_path / "d.jsonl")
    back = ReplayDataset.load(tmp_path / "d.jsonl")
    assert back.to_jsonl() == ds.to_jsonl()
    assert back.next_episode == 1


def test_sampling_reaches_old_episodes():
    ds = collect_random(CalibrationEnv(), 3, ReplayDataset(), named_rng(0, "r"))
    rng = np.random.default_rng(0)
    seen = set()
    for _ in range(20):
        batch = ds.sample(4, rng)
        assert len({(r.episode, r.step) for r in batch}) == 4
        seen |= {r.episode for r in batch}
    assert seen == {0, 1, 2}


def test_train_zero_episodes_is_noop():
    ts = tiny_state()
    collect_random(CalibrationEnv(), 1, ts.dataset, ts.rngs["random_actions"])
    before = {k: v.copy() for k, v in ts.model.reward_params.items()}
    n = len(ts.dataset)
    train(CalibrationEnv(training=True), 0, ts, AgentConfig(), TINY_PSO)
    assert len(ts.dataset) == n and ts.memory.slots == {} and ts.log_rows == []
    assert all(np.array_equal(before[k], ts.model.reward_params[k]) for k in before)


def test_train_requires_data():
    with pytest.raises(ValueError):
        train(CalibrationEnv(training=True), 1, tiny_state(), AgentConfig(), TINY_PSO)


def test_train_one_episode():
    ts = tiny_state()
    collect_random(CalibrationEnv(), 1, ts.dataset, ts.rngs["random_actions"])
    train(CalibrationEnv(training=True), 1, ts, AgentConfig(batch_size=4), TINY_PSO)
    assert len(ts.dataset) == 8 and ts.episodes_done == 1
    assert sorted(ts.memory.slots) == [0, 1, 2, 3]
    assert ts.memory.get(0).shape == (2, 4, 36) and ts.memory.get(3).shape == (2, 1, 36)
    assert [r[:2] for r in ts.log_rows] == [[1, 0], [1, 1], [1, 2], [1, 3]]
    assert len(ts.trace_rows) == 4 * (TINY_PSO.iterations + 1)
    # each trace is non-decreasing
    for step in range(4):
        vals = [v for e, s, i, v in ts.trace_rows if s == step]
        assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_training_is_deterministic():
    cfg = AgentConfig(batch_size=4, random_episodes=1, train_episodes=1)
    a = run_training(EnvConfig(), TINY_MODEL, TINY_PSO, cfg, seed=3)
    b = run_training(EnvConfig(), TINY_MODEL, TINY_PSO, cfg, seed=3)
    assert format_log(a.log_rows) == format_log(b.log_rows)
    assert a.dataset.to_jsonl() == b.dataset.to_jsonl()


def test_divergence_aborts_episode(monkeypatch):
    ts = tiny_state()
    collect_random(CalibrationEnv(), 1, ts.dataset, ts.rngs["random_actions"])

    def boom(*a, **k):
        raise TrainingDivergenceError("nan")

    monkeypatch.setattr(ts.model, "train_step", boom)
    train(CalibrationEnv(training=True), 2, ts, AgentConfig(), TINY_PSO)
    assert ts.aborted == 2 and ts.log_rows == []


def test_divergence_retries_with_half_rate(monkeypatch):
    ts = tiny_state()
    collect_random(CalibrationEnv(), 1, ts.dataset, ts.rngs["random_actions"])
    calls = []
    real = ts.model.train_step

    def once(batch, lr_reward=None, lr_dynamics=None):
        calls.append(lr_reward)
        if len(calls) == 1:
            raise TrainingDivergenceError("nan")
        return real(batch, lr_reward, lr_dynamics)

    monkeypatch.setattr(ts.model, "train_step", once)
    agent._train_models(ts.model, ts.dataset, AgentConfig(), np.random.default_rng(0))
    assert calls == [None, TINY_MODEL.lr_reward / 2]


def test_checkpoint_round_trip(tmp_path):
    ts = tiny_state()
    collect_random(CalibrationEnv(), 1, ts.dataset, ts.rngs["random_actions"])
    train(CalibrationEnv(training=True), 1, ts, AgentConfig(batch_size=4), TINY_PSO)
    save_checkpoint(tmp_path, ts, "seed: 0\n")
    back = load_checkpoint(tmp_path)
    assert back.memory == ts.memory
    assert back.dataset.to_jsonl() == ts.dataset.to_jsonl()
    assert format_log(back.log_rows) == format_log(ts.log_rows)
    assert back.rngs["pso"].random() == ts.rngs["pso"].random()
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "missing")


def test_extrinsic_pretraining_phase_weights():
    env = phase_env(EnvConfig(mode="extrinsic"), False, True)
    assert not env.calibrate and env.config.weights.eta2 == 0 and env.config.weights.eta3 == 0
    fine = phase_env(EnvConfig(mode="extrinsic"), True, True)
    assert fine.calibrate and fine.config.weights.eta2 == 1e8


@pytest.mark.parametrize("mode,n", [("intrinsic", 4), ("extrinsic", 3)])
def test_handcrafted_actions_valid(mode, n):
    acts = load_handcrafted(mode)
    assert len(acts) == n
    for a in acts:
        np.testing.assert_array_equal(clip_and_scale(a).raw, a)
        assert np.any(a != 0)


def test_report_aggregates():
    rows = [EvalRow(0, 0, 0.1, 2.0, 3.0, False), EvalRow(0, 1, 0.3, 4.0, 5.0, True)]
    rep = EvalReport("random", rows)
    assert (rep.mean_error, rep.mean_path_length, rep.mean_a_opt) == pytest.approx((0.2, 3.0, 4.0))
    assert rep.to_dict()["rows"][1]["failed"] is True


def test_evaluate_paired_and_deterministic():
    a = evaluate(Policy("random"), EnvConfig(), 2, 1, seed=4)
    b = evaluate(Policy("random"), EnvConfig(), 2, 1, seed=4)
    assert [r.relative_error for r in a.rows] == [r.relative_error for r in b.rows]
    assert [(r.config, r.repeat) for r in a.rows] == [(0, 0), (1, 0)]
    h = evaluate(Policy("handcrafted", actions=load_handcrafted("intrinsic")), EnvConfig(), 2, 1, seed=4)
    assert h.mean_error > 0 and h.mean_path_length > 0


def test_learned_policy_evaluation_is_deterministic():
    ts = tiny_state()
    collect_random(CalibrationEnv(), 1, ts.dataset, ts.rngs["random_actions"])
    ts.model.update_normalizer(list(ts.dataset))
    pol = Policy("learned", ts.model, ts.memory, TINY_PSO)
    a = evaluate(pol, EnvConfig(), 1, 1, seed=0)
    b = evaluate(pol, EnvConfig(), 1, 1, seed=0)
    assert a.rows == b.rows
    assert ts.memory.slots == {}  # evaluation never writes the memory


def test_unknown_policy():
    with pytest.raises(ValueError):
        Policy("greedy").chooser(np.random.default_rng(0))
