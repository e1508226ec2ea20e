"""The calibration MDP: state bookkeeping, environment step and the four-part reward.

One action is a whole looped trajectory.  Stepping executes it in the
simulator, appends the new measurements, reruns calibration over everything
gathered so far and scores the increments

    R_t = eta1 * de + eta2 * do - eta3 * dd - eta4 * dl  (+ accuracy bonus)
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import calibrator as cal
from .errors import EpisodeFinishedError, InsufficientDataError, UnobservableMotionError
from .sensorsim import (
    BASE_CAMERA_POSE,
    Checkerboard,
    CoverageConfig,
    ImuSpec,
    KeyframeConfig,
    PathInterpolator,
    SensorDistribution,
    camera_frames,
    corner_speed,
    coverage_progress,
    keyframe_filter,
    nominal_sensor_config,
    sample_sensor_config,
    simulate_imu_from,
)
from .trajectory import ACTION_DIM, ActionParams, clip_and_scale, generate_waypoints, path_length

MODES = ("intrinsic", "extrinsic")
HORIZON = {"intrinsic": 4, "extrinsic": 3}
EIG_SENTINEL = 1e6
EXTRINSIC_ANGLES = np.array([False, False, False, True, True, True])


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent named sub-stream of a root seed."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode())]))


def check_mode(mode: str) -> str:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    return mode


# ----------------------------------------------------------------------------
# reward


@dataclass(frozen=True)
class RewardWeights:
    eta1: float = 1.0
    eta2: float = 0.0
    eta3: float = 1.0
    eta4: float = 0.2
    bonus: float = 5.0
    bonus_threshold: float = 0.01
    error_source: str = "ground_truth"  # or "reprojection"
    eta3_reprojection: float = 2.0

    def __post_init__(self):
        for k in ("eta1", "eta2", "eta3", "eta4", "bonus", "bonus_threshold", "eta3_reprojection"):
            if not getattr(self, k) >= 0:
                raise ValueError(f"{k} must be non-negative")
        if self.error_source not in ("ground_truth", "reprojection"):
            raise ValueError("error_source must be 'ground_truth' or 'reprojection'")

    @classmethod
    def for_mode(cls, mode: str, **overrides) -> "RewardWeights":
        base = {
            "intrinsic": dict(eta1=1.0, eta2=0.0, eta3=1.0, eta4=0.2, bonus=5.0),
            "extrinsic": dict(eta1=1.0, eta2=1e8, eta3=1.0, eta4=1.0, bonus=0.0),
        }[check_mode(mode)]
        return cls(**{**base, **overrides})

    @property
    def error_weight(self) -> float:
        return self.eta3_reprojection if self.error_source == "reprojection" else self.eta3


@dataclass(frozen=True)
class RewardTerms:
    """Cumulative quantities whose increments make up the reward."""

    e: float = 0.0  # empirical: coverage sum, or IMU entropy + detection fractions
    o: float = 0.0  # information: -A-optimality (extrinsic only)
    d: float = float("nan")  # calibration error: relative error or reprojection RMS
    error: float = float("nan")  # relative error w.r.t. ground truth, for the bonus


@dataclass(frozen=True)
class RewardBreakdown:
    delta_e: float
    delta_o: float
    delta_d: float
    delta_l: float
    empirical: float
    info_gain: float
    error: float
    path: float
    bonus: float

    @property
    def total(self) -> float:
        return self.empirical + self.info_gain + self.error + self.path + self.bonus

    def as_dict(self) -> dict:
        return {k: float(getattr(self, k)) for k in self.__dataclass_fields__}


def compute_reward(prev: RewardTerms, nxt: RewardTerms, action_path_length: float, weights: RewardWeights):
    """Return (R_t, breakdown); the breakdown's five weighted parts sum to R_t exactly."""
    de = nxt.e - prev.e
    do = nxt.o - prev.o
    # an undefined previous error (no reprojection RMS yet) contributes no increment
    dd = 0.0 if (np.isnan(prev.d) or np.isnan(nxt.d)) else nxt.d - prev.d
    bonus = weights.bonus if (weights.bonus > 0 and nxt.error < weights.bonus_threshold) else 0.0
    b = RewardBreakdown(
        de, do, dd, action_path_length,
        weights.eta1 * de, weights.eta2 * do, -weights.error_weight * dd, -weights.eta4 * action_path_length, bonus,
    )
    return b.total, b


def imu_entropy(samples: np.ndarray) -> float:
    """Sum over channels of the Gaussian differential entropy 0.5 log(2 pi e var)."""
    if len(samples) < 2:
        return 0.0
    var = np.maximum(np.var(samples, axis=0), 1e-300)
    return float(np.sum(0.5 * np.log(2.0 * np.pi * np.e * var)))


# ----------------------------------------------------------------------------
# state


@dataclass(frozen=True)
class CalibStatus:
    """Y_t: estimate, information status O_t and reprojection RMS.

    O_t is the 4 coverage progresses (intrinsic) or the ascending eigenvalues
    of the normalised extrinsic covariance.
    """

    theta_star: np.ndarray
    info_status: np.ndarray
    reprojection_rms: float = float("nan")
    calibrated: bool = False

    def features(self) -> np.ndarray:
        """Model-facing status vector: coverage as is, eigenvalues on a log10 scale."""
        if len(self.info_status) == 4:
            return np.asarray(self.info_status, dtype=float)
        return np.log10(np.maximum(self.info_status, 1e-300))

    def to_record(self) -> dict:
        return {
            "theta_star": self.theta_star.tolist(),
            "info_status": self.info_status.tolist(),
            "reprojection_rms": self.reprojection_rms,
            "calibrated": self.calibrated,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "CalibStatus":
        return cls(np.asarray(rec["theta_star"]), np.asarray(rec["info_status"]), rec["reprojection_rms"], rec["calibrated"])


def status_dim(mode: str) -> int:
    return 4 if check_mode(mode) == "intrinsic" else 6


@dataclass
class EnvConfig:
    mode: str = "intrinsic"
    horizon: int | None = None  # None: 4 for intrinsic, 3 for extrinsic
    action_duration: float = 8.0  # s
    waypoints: int = 60
    frame_rate: float = 10.0
    pixel_noise: float = 0.1  # px
    imu: ImuSpec = field(default_factory=ImuSpec)
    distribution: SensorDistribution = field(default_factory=SensorDistribution)
    board: Checkerboard = field(default_factory=Checkerboard)
    coverage: CoverageConfig = field(default_factory=CoverageConfig)
    keyframes: KeyframeConfig = field(default_factory=KeyframeConfig)
    weights: RewardWeights | None = None
    path_c: float = 1.0
    lm_iterations_train: int = 1
    lm_iterations_eval: int = 10
    extrinsic_settings: cal.ExtrinsicSettings = field(default_factory=cal.ExtrinsicSettings)

    def __post_init__(self):
        check_mode(self.mode)
        if self.horizon is None:
            self.horizon = HORIZON[self.mode]
        if self.weights is None:
            self.weights = RewardWeights.for_mode(self.mode)
        if self.horizon < 1 or self.waypoints < 2 or self.action_duration <= 0 or self.frame_rate <= 0:
            raise ValueError("invalid environment timing")
        if self.pixel_noise < 0:
            raise ValueError("pixel_noise must be non-negative")


@dataclass
class _EpisodeData:
    intr: object
    extr: object
    rng_camera: np.random.Generator
    rng_imu: np.random.Generator
    frames: list = field(default_factory=list)
    kept: list = field(default_factory=list)
    segments: list = field(default_factory=list)
    imu_samples: list = field(default_factory=list)
    detection_sum: float = 0.0
    imu_bias: np.ndarray | None = None
    terms: RewardTerms = field(default_factory=RewardTerms)
    last_result: cal.CalibrationResult | None = None


@dataclass
class EpisodeState:
    """S_t: action history A_{0:t-1} and status history Y_{0:t}."""

    mode: str
    seed: int
    horizon: int
    actions: list = field(default_factory=list)
    statuses: list = field(default_factory=list)
    data: _EpisodeData | None = field(default=None, repr=False)

    @property
    def t(self) -> int:
        return len(self.actions)

    @property
    def done(self) -> bool:
        return self.t >= self.horizon

    @property
    def truth(self) -> np.ndarray:
        return self.data.intr.as_vector() if self.mode == "intrinsic" else self.data.extr.as_vector()

    def action_history(self) -> np.ndarray:
        return np.array([a.raw for a in self.actions]).reshape(-1, ACTION_DIM)

    def status_history(self) -> np.ndarray:
        return np.array([s.features() for s in self.statuses])


@dataclass(frozen=True)
class StepResult:
    status: CalibStatus
    reward: float
    breakdown: RewardBreakdown
    done: bool
    path_length: float
    relative_error: float


# ----------------------------------------------------------------------------
# environment


class CalibrationEnv:
    """Simulated calibration process; ``training`` caps the extrinsic LM at one iteration.

    ``calibrate=False`` skips extrinsic estimation entirely (status stays at
    the prior); used when neither the information nor the error reward is
    active.
    """

    def __init__(self, config: EnvConfig | None = None, training: bool = False, calibrate: bool = True):
        self.config = config or EnvConfig()
        self.training = training
        self.calibrate = calibrate
        self.nominal_intr, self.nominal_extr = nominal_sensor_config(self.config.distribution)

    @property
    def mode(self) -> str:
        return self.config.mode

    @property
    def nominal_theta(self) -> np.ndarray:
        return self.nominal_intr.as_vector() if self.mode == "intrinsic" else self.nominal_extr.as_vector()

    def angle_mask(self):
        return None if self.mode == "intrinsic" else EXTRINSIC_ANGLES

    def prior_status(self) -> CalibStatus:
        if self.mode == "intrinsic":
            info = np.zeros(4)
        else:
            info = np.full(6, EIG_SENTINEL)
        return CalibStatus(self.nominal_theta.copy(), info)

    def reset(self, seed: int, config_seed: int | None = None) -> EpisodeState:
        """Fresh episode; the sensor configuration comes from ``config_seed`` when given."""
        cs = seed if config_seed is None else config_seed
        intr, extr = sample_sensor_config(rng_stream(cs, "sensor"), self.config.distribution)
        data = _EpisodeData(intr, extr, rng_stream(seed, "camera"), rng_stream(seed, "imu"))
        state = EpisodeState(self.mode, int(seed), self.config.horizon, data=data)
        prior = self.prior_status()
        state.statuses.append(prior)
        err = cal.relative_error(prior.theta_star, state.truth, self.angle_mask())
        o = -float(np.sum(prior.info_status)) if self.mode == "extrinsic" else 0.0
        d = err if self.config.weights.error_source == "ground_truth" else float("nan")
        data.terms = RewardTerms(0.0, o, d, err)
        return state

    def step(self, state: EpisodeState, action) -> StepResult:
        if state.done:
            raise EpisodeFinishedError(f"episode finished after {state.horizon} steps")
        if not isinstance(action, ActionParams):
            action = clip_and_scale(action)
        cfg, data = self.config, state.data
        path = generate_waypoints(action, BASE_CAMERA_POSE, cfg.waypoints)
        length = path_length(path, cfg.path_c)
        interp = PathInterpolator(path, cfg.action_duration)
        t0 = state.t * cfg.action_duration
        frames = camera_frames(interp, data.intr, cfg.board, cfg.frame_rate, cfg.pixel_noise, data.rng_camera, t0)
        data.frames.extend(frames)

        if self.mode == "intrinsic":
            status, e = self._intrinsic_update(state, frames)
        else:
            imu = simulate_imu_from(interp, cfg.action_duration, cfg.imu, data.extr, data.rng_imu, data.imu_bias, t0)
            data.imu_bias = imu.final_bias
            data.segments.append(cal.SensorSegment(frames, imu))
            data.imu_samples.append(np.hstack([imu.accel, imu.gyro]))
            data.detection_sum += float(np.mean([f.n_corners for f in frames])) / cfg.board.n_corners
            status = self._extrinsic_update(state)
            e = imu_entropy(np.vstack(data.imu_samples)) + data.detection_sum

        err = cal.relative_error(status.theta_star, state.truth, self.angle_mask())
        o = -float(np.sum(status.info_status)) if self.mode == "extrinsic" else 0.0
        if cfg.weights.error_source == "ground_truth":
            d = err
        else:
            d = status.reprojection_rms if status.calibrated else float("nan")
        terms = RewardTerms(e, o, d, err)
        reward, breakdown = compute_reward(data.terms, terms, length, cfg.weights)
        data.terms = terms
        state.actions.append(action)
        state.statuses.append(status)
        return StepResult(status, reward, breakdown, state.done, length, err)

    def final_result(self, state: EpisodeState) -> cal.CalibrationResult | None:
        """Full-accuracy calibration over everything the episode gathered; None if it fails."""
        data = state.data
        if self.mode == "intrinsic":
            return data.last_result
        try:
            return cal.calibrate_extrinsics(
                data.segments, data.intr, self.config.board, theta_ref=self.nominal_theta,
                max_iterations=self.config.lm_iterations_eval, settings=self.config.extrinsic_settings,
                prior_mean=self.nominal_theta,
            )
        except (InsufficientDataError, UnobservableMotionError):
            return None

    def _intrinsic_update(self, state: EpisodeState, frames):
        cfg, data = self.config, state.data
        prev = None
        for f in frames:
            speed = corner_speed(prev, f)
            prev = f
            if keyframe_filter(f, data.kept, speed, cfg.keyframes, cfg.board.cols):
                data.kept.append(f)
        coverage = coverage_progress(data.kept, cfg=cfg.coverage, board_cols=cfg.board.cols)
        try:
            res = cal.calibrate_intrinsics(data.kept, cfg.board, theta_ref=self.nominal_theta)
        except InsufficientDataError:
            return CalibStatus(self.nominal_theta.copy(), coverage), float(np.sum(coverage))
        data.last_result = res
        return CalibStatus(res.theta_star, coverage, res.reprojection_rms, True), float(np.sum(coverage))

    def _extrinsic_update(self, state: EpisodeState) -> CalibStatus:
        cfg, data = self.config, state.data
        if not self.calibrate:
            return self.prior_status()
        init = None
        if self.training and data.last_result is not None:
            init = data.last_result.theta_star
        iters = cfg.lm_iterations_train if self.training else cfg.lm_iterations_eval
        try:
            res = cal.calibrate_extrinsics(
                data.segments, data.intr, cfg.board, init=init, theta_ref=self.nominal_theta,
                max_iterations=iters, settings=cfg.extrinsic_settings,
                prior_mean=self.nominal_theta,
            )
        except (InsufficientDataError, UnobservableMotionError):
            return self.prior_status()
        data.last_result = res
        eig = np.clip(np.linalg.eigvalsh(res.normalized_covariance), 0.0, None)
        return CalibStatus(res.theta_star, eig, res.reprojection_rms, True)


# ----------------------------------------------------------------------------
# replay records


@dataclass(frozen=True)
class ReplayRecord:
    """One training tuple {Y_{0:t}, A_{0:t-1}, A_t, Y_{t+1}, R_t} with provenance."""

    episode: int
    step: int
    seed: int
    mode: str
    statuses: np.ndarray  # (t + 1, status_dim) model features of Y_{0:t}
    actions: np.ndarray  # (t, 36) raw actions A_{0:t-1}
    action: np.ndarray  # (36,) raw A_t
    next_status: np.ndarray  # (status_dim,)
    reward: float
    breakdown: dict = field(default_factory=dict)
    truth: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {
                "episode": self.episode,
                "step": self.step,
                "seed": self.seed,
                "mode": self.mode,
                "statuses": np.asarray(self.statuses).tolist(),
                "actions": np.asarray(self.actions).tolist(),
                "action": np.asarray(self.action).tolist(),
                "next_status": np.asarray(self.next_status).tolist(),
                "reward": self.reward,
                "breakdown": self.breakdown,
                "truth": list(self.truth),
            }
        )

    @classmethod
    def from_json(cls, line: str) -> "ReplayRecord":
        r = json.loads(line)
        dim = len(r["next_status"])
        return cls(
            r["episode"], r["step"], r["seed"], r["mode"],
            np.asarray(r["statuses"], dtype=float).reshape(-1, dim),
            np.asarray(r["actions"], dtype=float).reshape(-1, ACTION_DIM),
            np.asarray(r["action"], dtype=float),
            np.asarray(r["next_status"], dtype=float),
            float(r["reward"]), r["breakdown"], r["truth"],
        )


def make_record(episode: int, state: EpisodeState, action: ActionParams, result: StepResult) -> ReplayRecord:
    """Build the tuple for the step just taken (``state`` already advanced)."""
    t = state.t - 1
    return ReplayRecord(
        episode, t, state.seed, state.mode,
        np.array([s.features() for s in state.statuses[: t + 1]]),
        np.array([a.raw for a in state.actions[:t]]).reshape(-1, ACTION_DIM),
        np.array(action.raw), result.status.features(), float(result.reward),
        result.breakdown.as_dict(), state.truth.tolist(),
    )


def replay_actions(env: CalibrationEnv, seed: int, actions) -> list[StepResult]:
    """Re-run an action sequence from a fresh reset; deterministic given the seed."""
    state = env.reset(seed)
    return [env.step(state, a) for a in actions]


__all__ = [
    "CalibStatus", "CalibrationEnv", "EnvConfig", "EpisodeState", "ReplayRecord", "RewardBreakdown",
    "RewardTerms", "RewardWeights", "StepResult", "compute_reward", "imu_entropy", "make_record",
    "replay_actions", "rng_stream", "status_dim",
]
