"""Synthetic camera + IMU rig observing a checkerboard.

World frame: gravity along -Z.  The camera base pose sits at the origin looking
along +Y with image-down along -Z; the board hangs 2 m in front of it.
The waypoint path is the camera path; the IMU pose follows through the rig
extrinsics (camera frame expressed in the IMU frame).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Iterator, NamedTuple

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.spatial import ConvexHull

from .geometry import euler_to_matrix, log_so3, matrix_to_euler, wrap_angle
from .trajectory import Pose, WaypointPath

GRAVITY = np.array([0.0, 0.0, -9.81])
BASE_CAMERA_POSE = Pose(np.zeros(3), np.array([-np.pi / 2, 0.0, 0.0]))
BOARD_DISTANCE = 2.0


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int = 640
    height: int = 480

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point outside the image")

    def as_vector(self) -> np.ndarray:
        return np.array([self.fx, self.fy, self.cx, self.cy])

    @classmethod
    def from_fov(cls, fov: float, width: int = 640, height: int = 480) -> "CameraIntrinsics":
        f = (width / 2.0) / np.tan(fov / 2.0)
        return cls(f, f, width / 2.0, height / 2.0, width, height)


@dataclass(frozen=True)
class RigExtrinsics:
    """Camera frame relative to the IMU frame: x_imu = R(rotation) @ x_cam + translation."""

    translation: np.ndarray
    rotation: np.ndarray  # roll, pitch, yaw

    def __post_init__(self):
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))
        object.__setattr__(self, "rotation", wrap_angle(np.asarray(self.rotation, dtype=float).reshape(3)))

    @property
    def R(self) -> np.ndarray:
        return euler_to_matrix(self.rotation)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.translation, self.rotation])

    @classmethod
    def from_vector(cls, v) -> "RigExtrinsics":
        v = np.asarray(v, dtype=float)
        return cls(v[:3], v[3:6])


@dataclass(frozen=True)
class Checkerboard:
    rows: int = 6
    cols: int = 7
    square: float = 0.06
    rotation: np.ndarray = field(default_factory=lambda: euler_to_matrix(BASE_CAMERA_POSE.orientation))
    center: np.ndarray = field(default_factory=lambda: np.array([0.0, BOARD_DISTANCE, 0.0]))

    def __post_init__(self):
        if self.rows < 2 or self.cols < 2:
            raise ValueError("board needs at least 2x2 interior corners")
        if self.square <= 0:
            raise ValueError("square size must be positive")

    @property
    def n_corners(self) -> int:
        return self.rows * self.cols

    def corners_board(self) -> np.ndarray:
        """Corner coordinates in the board frame (z = 0), id = row * cols + col."""
        r, c = np.divmod(np.arange(self.n_corners), self.cols)
        x = (c - (self.cols - 1) / 2.0) * self.square
        y = (r - (self.rows - 1) / 2.0) * self.square
        return np.stack([x, y, np.zeros_like(x)], axis=1)

    def corners_world(self) -> np.ndarray:
        return self.corners_board() @ np.asarray(self.rotation).T + self.center

    def to_world(self, R_cb: np.ndarray, t_cb: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Convert a board-in-camera pose to a camera-in-world pose (R_wc, p_wc)."""
        R_wc = self.rotation @ R_cb.T
        return R_wc, self.center - R_wc @ t_cb


@dataclass(frozen=True)
class ImuSpec:
    rate: float = 200.0
    accel_noise: float = 0.004
    accel_drift: float = 0.006
    gyro_noise: float = 0.0003394
    gyro_drift: float = 0.000038785

    def __post_init__(self):
        if self.rate <= 0:
            raise ValueError("IMU rate must be positive")
        if min(self.accel_noise, self.accel_drift, self.gyro_noise, self.gyro_drift) < 0:
            raise ValueError("noise terms must be non-negative")


@dataclass
class ImageObservation:
    timestamp: float
    ids: np.ndarray  # (n,) corner ids
    uv: np.ndarray  # (n, 2) pixels
    camera_pose: Pose
    image_size: tuple[int, int] = (640, 480)

    @property
    def n_corners(self) -> int:
        return len(self.ids)

    def to_record(self) -> dict:
        return {
            "type": "image",
            "t": self.timestamp,
            "ids": self.ids.tolist(),
            "uv": self.uv.tolist(),
            "pose": self.camera_pose.as_vector().tolist(),
            "image_size": list(self.image_size),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "ImageObservation":
        return cls(
            rec["t"],
            np.asarray(rec["ids"], dtype=int),
            np.asarray(rec["uv"], dtype=float).reshape(-1, 2),
            Pose.from_vector(rec["pose"]),
            tuple(rec["image_size"]),
        )


class ImuSample(NamedTuple):
    timestamp: float
    specific_force: np.ndarray
    angular_velocity: np.ndarray


@dataclass
class ImuData:
    """A block of IMU samples stored column-wise.

    Gyro sample i is the mean body rate over [t_i, t_i + dt], i.e.
    ``exp(gyro[i] * dt) == R_i.T @ R_{i+1}`` for noiseless data.
    """

    timestamps: np.ndarray
    accel: np.ndarray
    gyro: np.ndarray
    rate: float
    final_bias: np.ndarray = field(default_factory=lambda: np.zeros(6))

    def __len__(self) -> int:
        return len(self.timestamps)

    def __iter__(self) -> Iterator[ImuSample]:
        for t, a, w in zip(self.timestamps, self.accel, self.gyro):
            yield ImuSample(float(t), a, w)

    def to_records(self) -> Iterator[dict]:
        for s in self:
            yield {"type": "imu", "t": s.timestamp, "f": s.specific_force.tolist(), "w": s.angular_velocity.tolist()}


@dataclass(frozen=True)
class SensorDistribution:
    fov_mean: float = 1.00
    fov_std: float = 0.05
    translation_mean: tuple = (0.06, 0.00, -0.10)
    translation_std: tuple = (0.01, 0.01, 0.01)
    rotation_mean: tuple = (0.0, 0.0, 1.5708)
    rotation_std: tuple = (0.10, 0.10, 0.10)
    width: int = 640
    height: int = 480


def sample_sensor_config(rng: np.random.Generator, dist: SensorDistribution = SensorDistribution()):
    fov = dist.fov_mean + dist.fov_std * rng.standard_normal()
    t = np.asarray(dist.translation_mean) + np.asarray(dist.translation_std) * rng.standard_normal(3)
    r = np.asarray(dist.rotation_mean) + np.asarray(dist.rotation_std) * rng.standard_normal(3)
    return CameraIntrinsics.from_fov(fov, dist.width, dist.height), RigExtrinsics(t, r)


def nominal_sensor_config(dist: SensorDistribution = SensorDistribution()):
    return (
        CameraIntrinsics.from_fov(dist.fov_mean, dist.width, dist.height),
        RigExtrinsics(dist.translation_mean, dist.rotation_mean),
    )


# ----------------------------------------------------------------------------
# camera


def project_points(R_wc, p_wc, points_w, intr: CameraIntrinsics):
    """Pinhole projection; returns (uv, depth)."""
    Xc = (np.asarray(points_w) - p_wc) @ R_wc
    Z = Xc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr.fx * Xc[:, 0] / Z + intr.cx
        v = intr.fy * Xc[:, 1] / Z + intr.cy
    return np.stack([u, v], axis=1), Z


def project_board(
    pose: Pose,
    intr: CameraIntrinsics,
    board: Checkerboard,
    pixel_noise_sigma: float = 0.0,
    rng: np.random.Generator | None = None,
    timestamp: float = 0.0,
) -> ImageObservation:
    R_wc = euler_to_matrix(pose.orientation)
    uv, Z = project_points(R_wc, pose.position, board.corners_world(), intr)
    if pixel_noise_sigma > 0:
        # always draw for every corner so the stream does not depend on visibility
        uv = uv + pixel_noise_sigma * rng.standard_normal(uv.shape)
    ok = (Z > 0) & np.all(np.isfinite(uv), axis=1)
    ok &= (uv[:, 0] >= 0) & (uv[:, 0] < intr.width) & (uv[:, 1] >= 0) & (uv[:, 1] < intr.height)
    ids = np.flatnonzero(ok)
    return ImageObservation(timestamp, ids, uv[ids], pose, (intr.width, intr.height))


# ----------------------------------------------------------------------------
# continuous-time path


class PathInterpolator:
    """Clamped cubic spline through the waypoints; held at the base pose outside [0, duration]."""

    def __init__(self, path: WaypointPath, duration: float):
        if duration <= 0:
            raise ValueError("duration must be positive")
        poses = path.poses()
        poses[:, 3:] = np.unwrap(poses[:, 3:], axis=0)
        self.duration = float(duration)
        self.knots = np.linspace(0.0, duration, len(poses))
        self.spline = CubicSpline(self.knots, poses, axis=0, bc_type="clamped")
        self.base = poses[0]

    def pose_vectors(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = self.spline(np.clip(t, 0.0, self.duration))
        out[(t <= 0) | (t >= self.duration)] = self.base
        return out

    def __call__(self, t):
        """Camera positions (n, 3) and rotations (n, 3, 3) at times t."""
        v = self.pose_vectors(t)
        return v[:, :3], euler_to_matrix(v[:, 3:])


def camera_frames(
    interp: PathInterpolator,
    intr: CameraIntrinsics,
    board: Checkerboard,
    frame_rate: float,
    pixel_noise_sigma: float,
    rng: np.random.Generator,
    t0: float = 0.0,
) -> list[ImageObservation]:
    n = int(round(interp.duration * frame_rate))
    times = np.arange(n + 1) / frame_rate
    vecs = interp.pose_vectors(times)
    return [
        project_board(Pose.from_vector(v), intr, board, pixel_noise_sigma, rng, timestamp=t0 + t)
        for t, v in zip(times, vecs)
    ]


# ----------------------------------------------------------------------------
# IMU


def imu_kinematics(camera_pose_fn, extr: RigExtrinsics, times: np.ndarray, dt: float):
    """Noiseless specific force and gyro from a camera pose function.

    ``camera_pose_fn(t) -> (positions, rotations)``; ``times`` must be spaced
    by ``dt``.  Central second differences
    give the acceleration; the gyro is the forward rotation increment over dt.
    """
    R_bc = extr.R
    tt = np.concatenate([[times[0] - dt], times, [times[-1] + dt]])
    p_c, R_wc = camera_pose_fn(tt)
    R_wi = R_wc @ R_bc.T
    p_i = p_c - R_wi @ extr.translation
    acc = (p_i[2:] - 2.0 * p_i[1:-1] + p_i[:-2]) / dt**2
    R = R_wi[1:-1]
    f = np.einsum("nji,nj->ni", R, acc - GRAVITY)
    rel = np.einsum("nji,njk->nik", R, R_wi[2:])
    w = log_so3(rel) / dt
    return f, w


def simulate_imu(
    path: WaypointPath,
    duration: float,
    spec: ImuSpec,
    extr: RigExtrinsics,
    rng: np.random.Generator | None = None,
    initial_bias: np.ndarray | None = None,
    t0: float = 0.0,
) -> ImuData:
    dt = 1.0 / spec.rate
    if duration < 2 * dt:
        raise ValueError("duration shorter than two IMU periods")
    interp = PathInterpolator(path, duration)
    return simulate_imu_from(interp, duration, spec, extr, rng, initial_bias, t0)


def simulate_imu_from(interp, duration, spec: ImuSpec, extr, rng=None, initial_bias=None, t0=0.0) -> ImuData:
    dt = 1.0 / spec.rate
    n = int(round(duration * spec.rate))
    times = np.arange(n + 1) * dt
    f, w = imu_kinematics(interp, extr, times, dt)
    bias = np.zeros(6) if initial_bias is None else np.array(initial_bias, dtype=float)
    if rng is not None:
        noise_std = np.array([spec.accel_noise] * 3 + [spec.gyro_noise] * 3)
        walk_std = np.array([spec.accel_drift] * 3 + [spec.gyro_drift] * 3) / np.sqrt(spec.rate)
        steps = walk_std * rng.standard_normal((n + 1, 6))
        biases = bias + np.cumsum(steps, axis=0)
        noise = noise_std * rng.standard_normal((n + 1, 6)) + biases
        f = f + noise[:, :3]
        w = w + noise[:, 3:]
        bias = biases[-1]
    return ImuData(t0 + times, f, w, spec.rate, bias)


# ----------------------------------------------------------------------------
# coverage and keyframes


@dataclass(frozen=True)
class CoverageConfig:
    n_bins: int = 10
    size_range: tuple = (0.05, 0.5)
    skew_range: tuple = (0.0, 0.7)


@dataclass(frozen=True)
class KeyframeConfig:
    max_speed: float = 300.0  # mean corner speed, px/s
    min_distance: float = 0.08  # L1 distance between feature vectors


def _grid_rectangle(ids: np.ndarray, cols: int):
    """Largest axis-aligned corner rectangle with all four corners visible."""
    present = set(ids.tolist())
    rows_of = {}
    for i in ids:
        rows_of.setdefault(i // cols, []).append(i % cols)
    best, best_area = None, 0
    rows = sorted(rows_of)
    for a, r0 in enumerate(rows):
        c_r0 = rows_of[r0]
        for r1 in rows[a + 1 :]:
            common = sorted(set(c_r0).intersection(rows_of[r1]))
            if len(common) < 2:
                continue
            c0, c1 = common[0], common[-1]
            area = (r1 - r0) * (c1 - c0)
            if area > best_area and all(k in present for k in (r0 * cols + c0, r0 * cols + c1, r1 * cols + c1, r1 * cols + c0)):
                best, best_area = (r0 * cols + c0, r0 * cols + c1, r1 * cols + c1, r1 * cols + c0), area
    return best


def _corner_angle(a, b, c) -> float:
    u, v = a - b, c - b
    cosang = np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v))
    return float(np.arccos(np.clip(cosang, -1.0, 1.0)))


def observation_features(obs: ImageObservation, board_cols: int = 7):
    """(x, y, size, skew) for one view, or None if no corner rectangle is visible.

    x and y are the bounding-box centre normalised by image size; size is the
    convex-hull area over image area; skew is twice the mean deviation of the
    visible corner-rectangle's angles from 90 degrees, capped at 1.
    """
    if obs.n_corners < 4:
        return None
    rect = _grid_rectangle(obs.ids, board_cols)
    if rect is None:
        return None
    w, h = obs.image_size
    lo, hi = obs.uv.min(axis=0), obs.uv.max(axis=0)
    cx, cy = (lo + hi) / 2.0
    try:
        area = ConvexHull(obs.uv).volume
    except Exception:
        return None
    pos = {int(i): p for i, p in zip(obs.ids, obs.uv)}
    q = [pos[k] for k in rect]
    dev = [abs(np.pi / 2 - _corner_angle(q[i - 1], q[i], q[(i + 1) % 4])) for i in range(4)]
    skew = min(1.0, 2.0 * float(np.mean(dev)))
    return np.array([cx / w, cy / h, area / (w * h), skew])


def coverage_bins(features: np.ndarray, cfg: CoverageConfig = CoverageConfig()) -> np.ndarray:
    """Bin index per channel for a (n, 4) feature array."""
    lows = np.array([0.0, 0.0, cfg.size_range[0], cfg.skew_range[0]])
    highs = np.array([1.0, 1.0, cfg.size_range[1], cfg.skew_range[1]])
    frac = (np.clip(features, lows, highs) - lows) / (highs - lows)
    return np.minimum((frac * cfg.n_bins).astype(int), cfg.n_bins - 1)


def coverage_progress(
    observations: list[ImageObservation], intr: CameraIntrinsics | None = None, cfg: CoverageConfig = CoverageConfig(), board_cols: int = 7
) -> np.ndarray:
    """Fraction of range bins hit per channel (x, y, size, skew), each in [0, 1]."""
    feats = [f for f in (observation_features(o, board_cols) for o in observations) if f is not None]
    if not feats:
        return np.zeros(4)
    bins = coverage_bins(np.array(feats), cfg)
    return np.array([len(np.unique(bins[:, k])) / cfg.n_bins for k in range(4)])


def keyframe_filter(
    candidate: ImageObservation,
    kept: list[ImageObservation],
    speed: float,
    cfg: KeyframeConfig = KeyframeConfig(),
    board_cols: int = 7,
) -> bool:
    if not speed < cfg.max_speed:
        return False
    fc = _keyframe_vector(candidate, board_cols)
    if fc is None:
        return False
    for k in kept:
        fk = _keyframe_vector(k, board_cols)
        if fk is not None and np.sum(np.abs(fc - fk)) <= cfg.min_distance:
            return False
    return True


def _keyframe_vector(obs: ImageObservation, board_cols: int):
    f = observation_features(obs, board_cols)
    if f is None:
        return None
    w, h = obs.image_size
    mean = obs.uv.mean(axis=0)
    return np.array([mean[0] / w, mean[1] / h, f[2], f[3]])


def corner_speed(prev: ImageObservation | None, cur: ImageObservation) -> float:
    """Mean pixel speed of corners seen in both frames; inf if nothing is shared."""
    if prev is None:
        return 0.0
    dt = cur.timestamp - prev.timestamp
    common, ia, ib = np.intersect1d(prev.ids, cur.ids, return_indices=True)
    if len(common) == 0 or dt <= 0:
        return float("inf")
    return float(np.mean(np.linalg.norm(cur.uv[ib] - prev.uv[ia], axis=1)) / dt)


# ----------------------------------------------------------------------------
# serialization


def write_stream(path, observations=(), imu: ImuData | None = None, config: dict | None = None) -> None:
    """Newline-delimited JSON, one sample per line, optional config header."""
    with open(path, "w") as fh:
        if config is not None:
            fh.write(json.dumps({"type": "config", **config}) + "\n")
        for o in observations:
            fh.write(json.dumps(o.to_record()) + "\n")
        if imu is not None:
            for rec in imu.to_records():
                fh.write(json.dumps(rec) + "\n")


def read_stream(path):
    observations, imu, config = [], [], None
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            kind = rec.pop("type")
            if kind == "image":
                observations.append(ImageObservation.from_record(rec))
            elif kind == "imu":
                imu.append(ImuSample(rec["t"], np.asarray(rec["f"]), np.asarray(rec["w"])))
            elif kind == "config":
                config = rec
    return observations, imu, config


def sensor_config_record(intr: CameraIntrinsics, extr: RigExtrinsics) -> dict:
    return {"intrinsics": asdict(intr), "extrinsics": extr.as_vector().tolist()}


def camera_pose_matrices(pose: Pose):
    return euler_to_matrix(pose.orientation), pose.position


def pose_from_matrices(R, p) -> Pose:
    return Pose(p, matrix_to_euler(R))
