"""Looped Fourier-basis trajectories used as MDP actions.

An action is 36 coefficients laid out as six 6-vectors in the order
``a_1, b_1, a_2, b_2, a_4, b_4``; each 6-vector covers
``(x, y, z, roll, pitch, yaw)``.  Offset at waypoint j of J is

    sum_{q in (1, 2, 4)} a_q * (1 - cos(2 q pi j / J)) + b_q * sin(2 q pi j / J)

which vanishes at j = J, so every action starts and ends at the base pose.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidActionError
from .geometry import wrap_angle

ACTION_DIM = 36
HARMONICS = (1, 2, 4)
ACTION_BOUND = 0.015
# roll, pitch, yaw coefficient multipliers; translation is left as is
AXIS_SCALE = np.array([1.0, 1.0, 1.0, 2.5, 2.5, 5.0])
DEFAULT_WAYPOINTS = 60


@dataclass(frozen=True)
class ActionParams:
    """A clipped raw action.  ``coeffs`` gives the scaled (6, 6) coefficient table."""

    raw: np.ndarray

    def __post_init__(self):
        raw = np.asarray(self.raw, dtype=float).reshape(ACTION_DIM)
        if np.any(np.abs(raw) > ACTION_BOUND):
            raise InvalidActionError("raw action exceeds the clip bound; use clip_and_scale")
        raw.setflags(write=False)
        object.__setattr__(self, "raw", raw)

    @property
    def coeffs(self) -> np.ndarray:
        """Rows a_1, b_1, a_2, b_2, a_4, b_4; columns x, y, z, roll, pitch, yaw."""
        return self.raw.reshape(6, 6) * AXIS_SCALE

    @classmethod
    def zeros(cls) -> "ActionParams":
        return cls(np.zeros(ACTION_DIM))


@dataclass(frozen=True)
class Pose:
    position: np.ndarray
    orientation: np.ndarray  # roll, pitch, yaw

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))
        object.__setattr__(
            self, "orientation", wrap_angle(np.asarray(self.orientation, dtype=float).reshape(3))
        )

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.orientation])

    @classmethod
    def from_vector(cls, v) -> "Pose":
        v = np.asarray(v, dtype=float)
        return cls(v[:3], v[3:6])


@dataclass(frozen=True)
class WaypointPath:
    base_pose: Pose
    offsets: np.ndarray  # (J, 6), row j-1 holds waypoint j

    @property
    def n_waypoints(self) -> int:
        return len(self.offsets)

    def poses(self) -> np.ndarray:
        """Absolute poses for j = 0..J as a (J + 1, 6) array; row 0 is the base."""
        base = self.base_pose.as_vector()
        out = np.vstack([base, base + self.offsets])
        out[:, 3:] = wrap_angle(out[:, 3:])
        return out

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["j", "x", "y", "z", "roll", "pitch", "yaw"])
            for j, row in enumerate(self.poses()):
                w.writerow([j, *(repr(float(x)) for x in row)])


def clip_and_scale(raw) -> ActionParams:
    raw = np.asarray(raw, dtype=float).reshape(-1)
    if raw.size != ACTION_DIM:
        raise InvalidActionError(f"expected {ACTION_DIM} action elements, got {raw.size}")
    if not np.all(np.isfinite(raw)):
        raise InvalidActionError("action contains non-finite values")
    return ActionParams(np.clip(raw, -ACTION_BOUND, ACTION_BOUND))


def waypoint_offsets(coeffs: np.ndarray, J: int) -> np.ndarray:
    """Offsets (J, 6) for a scaled (6, 6) coefficient table."""
    j = np.arange(1, J + 1)
    out = np.zeros((J, 6))
    for k, q in enumerate(HARMONICS):
        phase = 2.0 * q * np.pi * j / J
        out += np.outer(1.0 - np.cos(phase), coeffs[2 * k]) + np.outer(np.sin(phase), coeffs[2 * k + 1])
    return out


def generate_waypoints(params: ActionParams, base: Pose, J: int = DEFAULT_WAYPOINTS) -> WaypointPath:
    if J < 2:
        raise ValueError("need at least two waypoints per action")
    return WaypointPath(base, waypoint_offsets(params.coeffs, J))


def path_length(path: WaypointPath, C: float = 1.0) -> float:
    """Translation plus C-weighted Euler distance between neighbouring waypoints, base included."""
    if C < 0:
        raise ValueError("C must be non-negative")
    poses = path.poses()
    d = np.diff(poses, axis=0)
    d[:, 3:] = wrap_angle(d[:, 3:])
    return float(np.sum(np.linalg.norm(d[:, :3], axis=1)) + C * np.sum(np.linalg.norm(d[:, 3:], axis=1)))
