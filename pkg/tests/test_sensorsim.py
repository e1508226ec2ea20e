import dataclasses

import numpy as np
import pytest

from calibrl.geometry import euler_to_matrix
from calibrl.sensorsim import (
    BASE_CAMERA_POSE,
    GRAVITY,
    CameraIntrinsics,
    Checkerboard,
    CoverageConfig,
    ImuSpec,
    KeyframeConfig,
    PathInterpolator,
    RigExtrinsics,
    SensorDistribution,
    camera_frames,
    corner_speed,
    coverage_progress,
    imu_kinematics,
    keyframe_filter,
    nominal_sensor_config,
    observation_features,
    project_board,
    read_stream,
    sample_sensor_config,
    simulate_imu,
    write_stream,
)
from calibrl.trajectory import Pose, WaypointPath, clip_and_scale, generate_waypoints

BOARD = Checkerboard()
INTR, EXTR = nominal_sensor_config()


def test_from_fov():
    intr = CameraIntrinsics.from_fov(np.pi / 2, 640, 480)
    assert intr.fx == pytest.approx(320.0)
    assert (intr.cx, intr.cy) == (320.0, 240.0)


def test_invalid_intrinsics():
    with pytest.raises(ValueError):
        CameraIntrinsics(-1, 500, 320, 240)
    with pytest.raises(ValueError):
        CameraIntrinsics(500, 500, 700, 240)


def test_board_visible_and_centred_at_base():
    obs = project_board(BASE_CAMERA_POSE, INTR, BOARD)
    assert obs.n_corners == BOARD.n_corners
    np.testing.assert_allclose(obs.uv.mean(axis=0), [INTR.cx, INTR.cy], atol=1e-9)


def test_board_behind_camera_not_visible():
    back = Pose(np.zeros(3), np.array([np.pi / 2, 0.0, 0.0]))
    assert project_board(back, INTR, BOARD).n_corners == 0


def test_pixel_noise_statistics():
    rng = np.random.default_rng(0)
    clean = project_board(BASE_CAMERA_POSE, INTR, BOARD).uv
    diffs = np.concatenate([project_board(BASE_CAMERA_POSE, INTR, BOARD, 0.5, rng).uv - clean for _ in range(200)])
    assert abs(diffs.mean()) < 0.02
    assert diffs.std() == pytest.approx(0.5, rel=0.05)


def test_sample_sensor_config_deterministic():
    a = sample_sensor_config(np.random.default_rng(5))
    b = sample_sensor_config(np.random.default_rng(5))
    assert a[0] == b[0]
    np.testing.assert_array_equal(a[1].as_vector(), b[1].as_vector())


def test_extrinsics_vector_round_trip():
    e = RigExtrinsics([0.1, 0.2, 0.3], [0.1, -0.2, 1.5])
    np.testing.assert_array_equal(RigExtrinsics.from_vector(e.as_vector()).as_vector(), e.as_vector())


def test_interpolator_hits_waypoints():
    path = generate_waypoints(clip_and_scale(np.full(36, 0.01)), BASE_CAMERA_POSE, 60)
    interp = PathInterpolator(path, 8.0)
    poses = path.poses()
    np.testing.assert_allclose(interp.pose_vectors(interp.knots[1:-1])[:, :3], poses[1:-1, :3], atol=1e-12)
    np.testing.assert_allclose(interp.pose_vectors([-1.0, 9.0]), np.tile(poses[0], (2, 1)))


def _static_interp():
    return PathInterpolator(WaypointPath(BASE_CAMERA_POSE, np.zeros((60, 6))), 2.0)


def test_static_imu_measures_gravity():
    imu = simulate_imu(WaypointPath(BASE_CAMERA_POSE, np.zeros((60, 6))), 2.0, ImuSpec(), EXTR)
    R_wi = euler_to_matrix(BASE_CAMERA_POSE.orientation) @ EXTR.R.T
    np.testing.assert_allclose(imu.accel, np.tile(R_wi.T @ -GRAVITY, (len(imu), 1)), atol=1e-9)
    np.testing.assert_allclose(imu.gyro, 0.0, atol=1e-12)
    assert len(imu) == 401


def test_imu_kinematics_constant_motion():
    # camera spinning about world z at 0.3 rad/s while accelerating along x
    w, a = 0.3, np.array([0.5, 0.0, 0.0])

    def pose_fn(t):
        R = np.stack([euler_to_matrix(np.array([0.0, 0.0, w * s])) for s in t])
        p = 0.5 * a * t[:, None] ** 2
        return p, R

    extr = RigExtrinsics(np.zeros(3), np.zeros(3))
    times = np.arange(101) * 1e-3
    f, g = imu_kinematics(pose_fn, extr, times, 1e-3)
    np.testing.assert_allclose(g, np.tile([0, 0, w], (101, 1)), atol=1e-9)
    for s, fi in zip(times, f):
        R = euler_to_matrix(np.array([0.0, 0.0, w * s]))
        np.testing.assert_allclose(fi, R.T @ (a - GRAVITY), atol=1e-6)


def test_imu_noise_and_bias():
    rng = np.random.default_rng(1)
    spec = ImuSpec(accel_drift=0.0, gyro_drift=0.0)
    path = WaypointPath(BASE_CAMERA_POSE, np.zeros((60, 6)))
    clean = simulate_imu(path, 20.0, spec, EXTR)
    noisy = simulate_imu(path, 20.0, spec, EXTR, rng, initial_bias=np.r_[0.1, 0, 0, 0, 0, 0])
    d = noisy.accel - clean.accel
    assert d[:, 0].mean() == pytest.approx(0.1, abs=1e-3)
    assert d[:, 1].std() == pytest.approx(spec.accel_noise, rel=0.1)
    assert (noisy.gyro - clean.gyro).std() == pytest.approx(spec.gyro_noise, rel=0.1)
    np.testing.assert_array_equal(noisy.final_bias, [0.1, 0, 0, 0, 0, 0])


def test_imu_deterministic_with_seed():
    path = generate_waypoints(clip_and_scale(np.full(36, 0.01)), BASE_CAMERA_POSE, 60)
    a = simulate_imu(path, 8.0, ImuSpec(), EXTR, np.random.default_rng(3))
    b = simulate_imu(path, 8.0, ImuSpec(), EXTR, np.random.default_rng(3))
    np.testing.assert_array_equal(a.accel, b.accel)
    np.testing.assert_array_equal(a.gyro, b.gyro)


def test_imu_too_short():
    with pytest.raises(ValueError):
        simulate_imu(WaypointPath(BASE_CAMERA_POSE, np.zeros((2, 6))), 0.001, ImuSpec(), EXTR)


def test_imu_spec_validation():
    with pytest.raises(ValueError):
        ImuSpec(rate=0)
    with pytest.raises(ValueError):
        ImuSpec(accel_noise=-1)


def test_camera_frames_count_and_timestamps():
    frames = camera_frames(_static_interp(), INTR, BOARD, 10.0, 0.0, np.random.default_rng(0), t0=8.0)
    assert len(frames) == 21
    assert frames[0].timestamp == 8.0 and frames[-1].timestamp == pytest.approx(10.0)


def test_observation_features_base_view():
    f = observation_features(project_board(BASE_CAMERA_POSE, INTR, BOARD))
    assert f[0] == pytest.approx(0.5) and f[1] == pytest.approx(0.5)
    assert 0 < f[2] < 0.1
    assert f[3] == pytest.approx(0.0, abs=1e-9)


def test_features_none_for_few_corners():
    obs = project_board(BASE_CAMERA_POSE, INTR, BOARD)
    obs = dataclasses.replace(obs, ids=obs.ids[:3], uv=obs.uv[:3])
    assert observation_features(obs) is None


def test_coverage_empty_and_range():
    assert np.all(coverage_progress([]) == 0)
    path = generate_waypoints(clip_and_scale(np.full(36, 0.015)), BASE_CAMERA_POSE, 60)
    frames = camera_frames(PathInterpolator(path, 8.0), INTR, BOARD, 10.0, 0.0, None)
    cov = coverage_progress(frames, cfg=CoverageConfig())
    assert np.all((cov >= 0) & (cov <= 1))
    assert cov[0] > 0.1


def test_coverage_monotone_in_observations():
    path = generate_waypoints(clip_and_scale(np.full(36, -0.015)), BASE_CAMERA_POSE, 60)
    frames = camera_frames(PathInterpolator(path, 8.0), INTR, BOARD, 10.0, 0.0, None)
    prev = np.zeros(4)
    for k in range(1, len(frames) + 1, 5):
        cov = coverage_progress(frames[:k])
        assert np.all(cov >= prev)
        prev = cov


def test_keyframe_filter():
    obs = project_board(BASE_CAMERA_POSE, INTR, BOARD)
    assert keyframe_filter(obs, [], 0.0)
    assert not keyframe_filter(obs, [obs], 0.0)  # duplicate view
    assert not keyframe_filter(obs, [], KeyframeConfig().max_speed + 1)
    moved = project_board(Pose([0.3, 0, 0.2], BASE_CAMERA_POSE.orientation), INTR, BOARD)
    assert keyframe_filter(moved, [obs], 0.0)


def test_corner_speed():
    a = project_board(BASE_CAMERA_POSE, INTR, BOARD, timestamp=0.0)
    b = dataclasses.replace(a, uv=a.uv + [3.0, 4.0], timestamp=0.1)
    assert corner_speed(None, a) == 0.0
    assert corner_speed(a, b) == pytest.approx(50.0)
    c = dataclasses.replace(b, ids=np.array([], dtype=int), uv=np.zeros((0, 2)))
    assert corner_speed(a, c) == float("inf")


def test_stream_round_trip(tmp_path):
    frames = camera_frames(_static_interp(), INTR, BOARD, 10.0, 0.1, np.random.default_rng(0))[:3]
    imu = simulate_imu(WaypointPath(BASE_CAMERA_POSE, np.zeros((4, 6))), 0.05, ImuSpec(), EXTR)
    p = tmp_path / "s.jsonl"
    write_stream(p, frames, imu, {"seed": 3})
    obs, samples, cfg = read_stream(p)
    assert cfg == {"seed": 3}
    assert len(obs) == 3 and len(samples) == len(imu)
    np.testing.assert_array_equal(obs[1].uv, frames[1].uv)
    np.testing.assert_array_equal(samples[2].specific_force, imu.accel[2])


def test_optical_axis_point_hits_principal_point():
    from calibrl.sensorsim import project_points

    intr = CameraIntrinsics(300.0, 300.0, 320.0, 240.0)
    uv, z = project_points(np.eye(3), np.zeros(3), np.array([[0.0, 0.0, 2.0], [0.0, 0.0, -1.0]]), intr)
    np.testing.assert_allclose(uv[0], [320.0, 240.0])
    assert z[1] < 0


def test_zero_std_gives_mean_config():
    dist = SensorDistribution(fov_std=0.0, translation_std=(0, 0, 0), rotation_std=(0, 0, 0))
    intr, extr = sample_sensor_config(np.random.default_rng(0), dist)
    assert intr.fx == pytest.approx(320 / np.tan(0.5))
    assert intr.fx == pytest.approx(585.7, abs=0.1)
    np.testing.assert_allclose(extr.translation, [0.06, 0.0, -0.10])
    assert extr.rotation[2] == pytest.approx(1.5708)


def test_constant_velocity_reads_gravity_only():
    v = np.array([0.2, -0.1, 0.05])

    def pose_fn(t):
        return v * t[:, None], np.tile(np.eye(3), (len(t), 1, 1))

    extr = RigExtrinsics([0.05, 0, 0], [0.1, 0.2, 0.3])
    f, w = imu_kinematics(pose_fn, extr, np.arange(50) * 5e-3, 5e-3)
    np.testing.assert_allclose(f, np.tile(extr.R @ -GRAVITY, (50, 1)), atol=1e-9)
    np.testing.assert_allclose(w, 0.0, atol=1e-12)


def test_single_frontal_view_partial_coverage():
    cov = coverage_progress([project_board(BASE_CAMERA_POSE, INTR, BOARD)])
    assert 0 < cov[0] < 1 and 0 < cov[1] < 1


def test_scripted_sweep_reaches_full_coverage():
    from calibrl.geometry import matrix_to_euler

    obs = []
    for dist in np.linspace(0.35, 2.5, 6):
        for u in np.linspace(0.02, 0.98, 11):
            for v in np.linspace(0.02, 0.98, 11):
                for tilt in (0.0, 0.9):
                    x = (u * INTR.width - INTR.cx) / INTR.fx * dist
                    y = (v * INTR.height - INTR.cy) / INTR.fy * dist
                    R_wc = BOARD.rotation @ euler_to_matrix(np.array([0.7 * tilt, tilt, 0.0]))
                    p = BOARD.center - R_wc @ np.array([-x, -y, dist])
                    obs.append(project_board(Pose(p, matrix_to_euler(R_wc)), INTR, BOARD))
    assert np.all(coverage_progress(obs) >= 0.99)


def test_noiseless_projection_deterministic():
    a = project_board(BASE_CAMERA_POSE, INTR, BOARD)
    b = project_board(BASE_CAMERA_POSE, INTR, BOARD)
    np.testing.assert_array_equal(a.uv, b.uv)
