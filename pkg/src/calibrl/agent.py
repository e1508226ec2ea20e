"""Model-based heuristic RL loop: random data gathering, model training,
PSO planning inside MPC, and evaluation against baseline trajectories."""

from __future__ import annotations

import csv
import io
import json
import logging
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from . import pso
from .calibrator import relative_error
from .errors import CalibRLError, TrainingDivergenceError
from .mdp import EIG_SENTINEL, CalibrationEnv, EnvConfig, ReplayRecord, make_record, status_dim
from .models import ModelConfig, WorldModel
from .trajectory import ACTION_BOUND, ACTION_DIM, HARMONICS, clip_and_scale

log = logging.getLogger(__name__)

HANDCRAFTED_FILE = Path(__file__).parent / "data" / "handcrafted.yaml"
COEFF_ROWS = [f"{k}{q}" for q in HARMONICS for k in ("a", "b")]


def episode_seed(root: int, purpose: str, index: int) -> int:
    ss = np.random.SeedSequence([int(root) & 0xFFFFFFFF, zlib.crc32(purpose.encode()), int(index)])
    return int(ss.generate_state(1)[0])


def named_rng(root: int, name: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(root) & 0xFFFFFFFF, zlib.crc32(name.encode())]))


# ----------------------------------------------------------------------------
# replay dataset


class ReplayDataset:
    """Append-only D_RL; (episode, step) keys strictly increase."""

    def __init__(self):
        self._records: list[ReplayRecord] = []

    def __len__(self) -> int:
        return len(self._records)

    def __getitem__(self, i) -> ReplayRecord:
        return self._records[i]

    def __iter__(self):
        return iter(self._records)

    def append(self, rec: ReplayRecord) -> None:
        if self._records:
            last = self._records[-1]
            if (rec.episode, rec.step) <= (last.episode, last.step):
                raise ValueError("replay indices must strictly increase")
        self._records.append(rec)

    @property
    def next_episode(self) -> int:
        return self._records[-1].episode + 1 if self._records else 0

    def sample(self, n: int, rng: np.random.Generator) -> list[ReplayRecord]:
        """Uniform minibatch over all past records (without replacement)."""
        if not self._records:
            raise ValueError("empty dataset")
        idx = rng.choice(len(self._records), size=min(n, len(self._records)), replace=False)
        return [self._records[i] for i in np.sort(idx)]

    def to_jsonl(self) -> str:
        return "".join(r.to_json() + "\n" for r in self._records)

    def save(self, path) -> None:
        Path(path).write_text(self.to_jsonl())

    @classmethod
    def load(cls, path) -> "ReplayDataset":
        ds = cls()
        for line in Path(path).read_text().splitlines():
            if line.strip():
                ds.append(ReplayRecord.from_json(line))
        return ds


# ----------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class AgentConfig:
    batch_size: int = 32
    grad_steps: int = 1  # SGD updates per model per MDP step
    random_episodes: int = 50
    train_episodes: int = 200
    finetune_episodes: int = 0  # extrinsic only: episodes with information and accuracy rewards

    def __post_init__(self):
        if self.batch_size < 1 or self.grad_steps < 1:
            raise ValueError("batch_size and grad_steps must be positive")
        if min(self.random_episodes, self.train_episodes, self.finetune_episodes) < 0:
            raise ValueError("episode budgets must be non-negative")


def phase_env(env_config: EnvConfig, finetune: bool, training: bool) -> CalibrationEnv:
    """Environment for a training phase.

    Extrinsic pre-training uses only the empirical and path terms and skips
    estimation; fine-tuning enables information gain and accuracy.
    """
    if env_config.mode == "extrinsic" and not finetune:
        cfg = replace(env_config, weights=replace(env_config.weights, eta2=0.0, eta3=0.0, eta3_reprojection=0.0))
        return CalibrationEnv(cfg, training=training, calibrate=False)
    return CalibrationEnv(env_config, training=training, calibrate=True)


# ----------------------------------------------------------------------------
# data collection


def _run_episode(env: CalibrationEnv, seed: int, choose, episode: int, config_seed=None):
    """Run one episode; ``choose(state) -> (raw action, extra)``.  Returns (state, records, extras)."""
    state = env.reset(seed, config_seed=config_seed)
    records, extras = [], []
    while not state.done:
        raw, extra = choose(state)
        action = clip_and_scale(raw)
        result = env.step(state, action)
        records.append((make_record(episode, state, action, result), result))
        extras.append(extra)
    return state, records, extras


def collect_random(env: CalibrationEnv, episodes: int, dataset: ReplayDataset, rng: np.random.Generator, root_seed: int = 0):
    """Append ``episodes`` uniformly random episodes to the dataset."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    for _ in range(episodes):
        ep = dataset.next_episode
        seed = episode_seed(root_seed, "collect", ep)
        try:
            _, recs, _ = _run_episode(env, seed, lambda s: (rng.uniform(-ACTION_BOUND, ACTION_BOUND, ACTION_DIM), None), ep)
        except (CalibRLError, ValueError, np.linalg.LinAlgError) as exc:
            log.warning("random episode %d failed and was skipped: %s", ep, exc)
            continue
        for rec, _ in recs:
            dataset.append(rec)
    return dataset


# ----------------------------------------------------------------------------
# planning


def plan(model: WorldModel, state, memory: pso.SwarmMemory | None, pso_cfg: pso.PsoConfig, rng) -> pso.PsoResult:
    """Optimise A_{t:T} against the model's predicted reward sum (MPC objective)."""
    hist_a = state.action_history()
    hist_y = state.status_history()
    shape = (state.horizon - state.t, ACTION_DIM)

    def evaluate(P):
        return model.objective_and_grad(hist_a, hist_y, P)

    entry = memory.get(state.t) if memory is not None else None
    return pso.optimize(evaluate, None, shape, entry, pso_cfg, rng)


# ----------------------------------------------------------------------------
# training


LOG_COLUMNS = [
    "episode", "step", "eps_dyn", "eps_reward", "reward", "empirical", "info_gain", "error", "path", "bonus",
    "pso_best", "relative_error",
]


@dataclass
class TrainingState:
    model: WorldModel
    memory: pso.SwarmMemory
    dataset: ReplayDataset
    rngs: dict
    log_rows: list = field(default_factory=list)
    trace_rows: list = field(default_factory=list)
    episodes_done: int = 0
    aborted: int = 0


def make_rngs(seed: int) -> dict:
    return {name: named_rng(seed, name) for name in ("random_actions", "minibatch", "pso", "selection")}


def _train_models(model: WorldModel, dataset: ReplayDataset, cfg: AgentConfig, rng):
    losses = (float("nan"), float("nan"))
    for k in range(cfg.grad_steps):
        batch = dataset.sample(cfg.batch_size, rng)
        try:
            step_losses = model.train_step(batch)
        except TrainingDivergenceError:
            log.warning("model update diverged; retrying with half the learning rate")
            step_losses = model.train_step(
                batch, lr_reward=model.config.lr_reward / 2, lr_dynamics=model.config.lr_dynamics / 2
            )
        if k == 0:
            losses = step_losses
    return losses


def train(
    env: CalibrationEnv,
    episodes: int,
    ts: TrainingState,
    agent_cfg: AgentConfig,
    pso_cfg: pso.PsoConfig,
    root_seed: int = 0,
) -> TrainingState:
    """Algorithm 1 for ``episodes`` episodes; zero episodes is a no-op."""
    if episodes > 0 and len(ts.dataset) == 0:
        raise ValueError("dataset is empty; collect random episodes first")
    for _ in range(episodes):
        ep = ts.dataset.next_episode
        state = env.reset(episode_seed(root_seed, "train", ep))
        pending = []
        try:
            while not state.done:
                eps_dyn, eps_rew = _train_models(ts.model, ts.dataset, agent_cfg, ts.rngs["minibatch"])
                res = plan(ts.model, state, ts.memory, pso_cfg, ts.rngs["pso"])
                pso.update_memory(ts.memory, state.t, res.particles, pso_cfg.memory_size)
                seq = pso.select_action(res.particles, "train", pso_cfg.pool, ts.rngs["selection"])
                action = clip_and_scale(seq[0])
                result = env.step(state, action)
                rec = make_record(ep, state, action, result)
                ts.dataset.append(rec)
                ts.model.update_normalizer([rec])
                b = result.breakdown
                pending.append([
                    ep, rec.step, eps_dyn, eps_rew, result.reward, b.empirical, b.info_gain, b.error, b.path,
                    b.bonus, res.best_value, result.relative_error,
                ])
                ts.trace_rows.extend((ep, rec.step, i, v) for i, v in enumerate(res.trace))
        except TrainingDivergenceError as exc:
            # records already appended stay valid; the episode's log rows are dropped
            log.error("episode %d aborted after a second divergence: %s", ep, exc)
            ts.aborted += 1
            continue
        ts.log_rows.extend(pending)
        ts.episodes_done += 1
    return ts


def write_log(path, rows) -> None:
    Path(path).write_text(format_log(rows))


def format_log(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_COLUMNS)
    for r in rows:
        w.writerow([r[0], r[1], *(repr(float(x)) for x in r[2:])])
    return buf.getvalue()


def read_log(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return [[int(r[0]), int(r[1]), *(float(x) for x in r[2:])] for r in rows]


def _read_trace(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return [(int(r[0]), int(r[1]), int(r[2]), float(r[3])) for r in rows]


def new_training_state(mode: str, model_cfg: ModelConfig, pso_cfg: pso.PsoConfig, seed: int) -> TrainingState:
    model_cfg = replace(model_cfg, status_dim=status_dim(mode), seed=episode_seed(seed, "model-init", 0))
    return TrainingState(WorldModel(model_cfg), pso.SwarmMemory(pso_cfg.memory_size), ReplayDataset(), make_rngs(seed))


def run_training(
    env_config: EnvConfig,
    model_cfg: ModelConfig,
    pso_cfg: pso.PsoConfig,
    agent_cfg: AgentConfig,
    seed: int,
    ts: TrainingState | None = None,
) -> TrainingState:
    """Random collection, then training (and extrinsic fine-tuning) from one root seed."""
    ts = ts or new_training_state(env_config.mode, model_cfg, pso_cfg, seed)
    if agent_cfg.random_episodes and len(ts.dataset) == 0:
        collect_random(phase_env(env_config, False, True), agent_cfg.random_episodes, ts.dataset, ts.rngs["random_actions"], seed)
        ts.model.update_normalizer(list(ts.dataset))
    train(phase_env(env_config, False, True), agent_cfg.train_episodes, ts, agent_cfg, pso_cfg, seed)
    if env_config.mode == "extrinsic" and agent_cfg.finetune_episodes:
        train(phase_env(env_config, True, True), agent_cfg.finetune_episodes, ts, agent_cfg, pso_cfg, seed)
    return ts


# ----------------------------------------------------------------------------
# checkpoints


def _rng_state(rng) -> dict:
    return rng.bit_generator.state


def save_checkpoint(directory, ts: TrainingState, config_text: str | None = None) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    ts.model.save(d)
    ts.memory.save(d / "memory.npz")
    ts.dataset.save(d / "dataset.jsonl")
    write_log(d / "training_log.csv", ts.log_rows)
    pso.write_trace(d / "pso_trace.csv", ts.trace_rows)
    (d / "rng_state.json").write_text(
        json.dumps(
            {k: _rng_state(v) for k, v in ts.rngs.items()} | {"episodes_done": ts.episodes_done, "aborted": ts.aborted},
            indent=2,
        )
    )
    if config_text is not None:
        (d / "config.yaml").write_text(config_text)


def load_checkpoint(directory) -> TrainingState:
    d = Path(directory)
    if not (d / "models.json").exists():
        raise FileNotFoundError(f"no model checkpoint in {d}")
    model = WorldModel.load(d)
    memory = pso.SwarmMemory.load(d / "memory.npz")
    dataset = ReplayDataset.load(d / "dataset.jsonl") if (d / "dataset.jsonl").exists() else ReplayDataset()
    rngs = make_rngs(0)
    done = aborted = 0
    if (d / "rng_state.json").exists():
        states = json.loads((d / "rng_state.json").read_text())
        done = states.pop("episodes_done", 0)
        aborted = states.pop("aborted", 0)
        for k, st in states.items():
            rngs[k] = np.random.default_rng()
            rngs[k].bit_generator.state = st
    log_rows = read_log(d / "training_log.csv") if (d / "training_log.csv").exists() else []
    trace_rows = _read_trace(d / "pso_trace.csv") if (d / "pso_trace.csv").exists() else []
    return TrainingState(model, memory, dataset, rngs, log_rows, trace_rows, episodes_done=done, aborted=aborted)


# ----------------------------------------------------------------------------
# policies and evaluation


def load_handcrafted(mode: str, path=HANDCRAFTED_FILE) -> list[np.ndarray]:
    """Raw 36-vectors for the documented handcrafted trajectories of a mode."""
    spec = yaml.safe_load(Path(path).read_text())[mode]
    out = []
    for entry in spec:
        raw = np.zeros((6, 6))
        for r, name in enumerate(COEFF_ROWS):
            if name in entry:
                raw[r] = entry[name]
        out.append(raw.ravel())
    return out


@dataclass
class Policy:
    """kind: 'random', 'handcrafted' or 'learned'."""

    kind: str
    model: WorldModel | None = None
    memory: pso.SwarmMemory | None = None
    pso_config: pso.PsoConfig = field(default_factory=pso.PsoConfig)
    actions: list | None = None
    status_calibrated: bool = True  # extrinsic: whether the planner was trained on calibrated statuses

    def chooser(self, rng: np.random.Generator):
        if self.kind == "random":
            return lambda state: (rng.uniform(-ACTION_BOUND, ACTION_BOUND, ACTION_DIM), None)
        if self.kind == "handcrafted":
            return lambda state: (self.actions[state.t % len(self.actions)], None)
        if self.kind == "learned":
            def choose(state):
                res = plan(self.model, state, self.memory, self.pso_config, rng)
                seq = pso.select_action(res.particles, "test", self.pso_config.pool)
                return seq[0], res.best_value  # MPC: execute only the first action
            return choose
        raise ValueError(f"unknown policy kind {self.kind!r}")


@dataclass
class EvalRow:
    config: int
    repeat: int
    relative_error: float
    path_length: float
    a_opt: float
    failed: bool


@dataclass
class EvalReport:
    policy: str
    rows: list

    @property
    def mean_error(self) -> float:
        return float(np.mean([r.relative_error for r in self.rows]))

    @property
    def mean_path_length(self) -> float:
        return float(np.mean([r.path_length for r in self.rows]))

    @property
    def mean_a_opt(self) -> float:
        return float(np.mean([r.a_opt for r in self.rows]))

    def to_dict(self) -> dict:
        return {
            "policy": self.policy,
            "mean_error": self.mean_error,
            "mean_path_length": self.mean_path_length,
            "mean_a_opt": self.mean_a_opt,
            "rows": [r.__dict__ for r in self.rows],
        }


def _eval_one(args):
    policy, env_config, seed, ci, ri, calibrate = args
    env = CalibrationEnv(env_config, training=False, calibrate=calibrate)
    config_seed = episode_seed(seed, "eval-config", ci)
    run_seed = episode_seed(seed, f"eval-run-{ci}", ri)
    rng = named_rng(run_seed, "policy")
    state, recs, _ = _run_episode(env, run_seed, policy.chooser(rng), 0, config_seed=config_seed)
    length = float(sum(res.path_length for _, res in recs))
    result = env.final_result(state)
    if result is None:
        err = relative_error(env.nominal_theta, state.truth, env.angle_mask())
        return EvalRow(ci, ri, err, length, EIG_SENTINEL * status_dim(env_config.mode), True)
    err = relative_error(result.theta_star, state.truth, env.angle_mask())
    return EvalRow(ci, ri, err, length, result.metrics.a_opt, False)


def evaluate(policy: Policy, env_config: EnvConfig, n_configs: int, repeats: int, seed: int, workers: int = 1) -> EvalReport:
    """Run ``n_configs`` sensor configurations x ``repeats`` episodes; learned policies act in test mode.

    Configuration ``i`` and repeat ``r`` use the same seeds for every policy,
    so reports are paired.
    """
    calibrate = True
    if env_config.mode == "extrinsic":
        # the planner sees statuses in the form it was trained on; scoring uses
        # a full-accuracy calibration at the end of the episode either way
        calibrate = policy.kind == "learned" and policy.status_calibrated
    jobs = [(policy, env_config, seed, ci, ri, calibrate) for ci in range(n_configs) for ri in range(repeats)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_eval_one, jobs))
    else:
        rows = [_eval_one(j) for j in jobs]
    return EvalReport(policy.kind, rows)
