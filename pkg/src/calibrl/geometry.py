"""Rotation helpers shared by the simulator and the estimators.

Euler angles are intrinsic X-Y-Z (roll, pitch, yaw): R = Rx(roll) @ Ry(pitch) @ Rz(yaw).
"""

from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation

EULER_SEQ = "XYZ"


def wrap_angle(a):
    """Wrap angles to (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    w = np.mod(a + np.pi, 2.0 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


def euler_to_matrix(rpy: np.ndarray) -> np.ndarray:
    return Rotation.from_euler(EULER_SEQ, rpy).as_matrix()


def matrix_to_euler(R: np.ndarray) -> np.ndarray:
    return wrap_angle(Rotation.from_matrix(R).as_euler(EULER_SEQ))


def exp_so3(rotvec: np.ndarray) -> np.ndarray:
    return Rotation.from_rotvec(rotvec).as_matrix()


def log_so3(R: np.ndarray) -> np.ndarray:
    return Rotation.from_matrix(R).as_rotvec()


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrices for a (..., 3) array."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out
