"""Shared builders for noiseless and noisy calibration data."""

import numpy as np

from calibrl.calibrator import SensorSegment
from calibrl.sensorsim import (
    BASE_CAMERA_POSE,
    Checkerboard,
    ImuSpec,
    PathInterpolator,
    camera_frames,
    sample_sensor_config,
    simulate_imu_from,
)
from calibrl.trajectory import clip_and_scale, generate_waypoints

BOARD = Checkerboard()


def random_action(rng):
    return clip_and_scale(rng.uniform(-0.015, 0.015, 36))


def record(actions, intr, extr, pixel_noise=0.0, rng_cam=None, rng_imu=None, duration=8.0):
    """Camera frames and IMU segments for a sequence of actions."""
    segments, bias = [], None
    for t, a in enumerate(actions):
        interp = PathInterpolator(generate_waypoints(a, BASE_CAMERA_POSE, 60), duration)
        frames = camera_frames(interp, intr, BOARD, 10.0, pixel_noise, rng_cam, t * duration)
        imu = simulate_imu_from(interp, duration, ImuSpec(), extr, rng_imu, bias, t * duration)
        bias = imu.final_bias
        segments.append(SensorSegment(frames, imu))
    return segments


def random_config(seed):
    rng = np.random.default_rng(seed)
    intr, extr = sample_sensor_config(rng)
    return rng, intr, extr


def diverse_views(intr, rng, noise, n=10):
    """Board views at random distance, tilt and image position."""
    from calibrl.geometry import euler_to_matrix, matrix_to_euler
    from calibrl.sensorsim import project_board
    from calibrl.trajectory import Pose

    out = []
    for _ in range(n):
        dist = rng.uniform(0.5, 1.2)
        tilt = rng.uniform(-0.7, 0.7, 2)
        u, v = rng.uniform(0.35, 0.65, 2)
        x = (u * intr.width - intr.cx) / intr.fx * dist
        y = (v * intr.height - intr.cy) / intr.fy * dist
        R_wc = BOARD.rotation @ euler_to_matrix(np.array([tilt[0], tilt[1], rng.uniform(-0.3, 0.3)]))
        p = BOARD.center - R_wc @ np.array([-x, -y, dist])
        out.append(project_board(Pose(p, matrix_to_euler(R_wc)), intr, BOARD, noise, rng))
    return out


# acceptance summary lines, printed by the terminal-summary hook in conftest.py
ACCEPTANCE = []


def report(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE.append(line)
    print(line)
