"""
Tests for the synthetic scene simulator
"""

import numpy as np
import pytest

from errors import CameraSeesNothing
from models import GeodeticCoord, NoiseConfig, SceneConfig
from src.geodesy import geodetic_to_enu, unproject, world_to_camera
from src.sim import (
    GRAVITY,
    MAG_FIELD_UT,
    STREAM_FIELDS,
    depth_noise_fraction,
    generate_scene,
    gps_bias_sequence,
    rssi_from_distance,
    sample_times,
    synthesize_camera,
    synthesize_ftm,
    synthesize_gps,
    synthesize_imu,
    world_to_body,
)
from tests.helpers import CircleTrajectory, StationaryTrajectory

ORIGIN = GeodeticCoord(latitude=40.5, longitude=-74.45, altitude=30.0)


# ==================== Scene Generation ====================

def test_zero_noise_streams_match_truth(quiet_scene_config):
    """Test: camera XYZ and FTM range equal their analytic values"""
    scene = generate_scene(quiet_scene_config)
    streams = scene.pedestrians["p0"]
    traj = scene.trajectories["p0"]
    assert len(streams.camera) > 0

    truth_cam = world_to_camera(scene.transform, traj.position(streams.camera[:, 0]))
    np.testing.assert_allclose(streams.camera[:, 4:7], truth_cam, atol=1e-9)

    distance = np.linalg.norm(traj.position(streams.ftm[:, 0]) - scene.rsu_world, axis=1)
    np.testing.assert_allclose(streams.ftm[:, 1], distance, atol=1e-12)
    assert np.all(streams.ftm[:, 2] == 0.0)


def test_same_seed_is_bit_identical(busy_scene_config):
    """Test: two generations with one config give identical streams"""
    a = generate_scene(busy_scene_config)
    b = generate_scene(busy_scene_config)
    assert list(a.pedestrians) == list(b.pedestrians)
    for ped_id in a.pedestrians:
        for modality in STREAM_FIELDS:
            np.testing.assert_array_equal(a.pedestrians[ped_id].stream(modality), b.pedestrians[ped_id].stream(modality))
    np.testing.assert_array_equal(a.surveyed_rsu, b.surveyed_rsu)


def test_streams_strictly_increasing(busy_scene_config):
    """Test: every stream has strictly increasing timestamps"""
    scene = generate_scene(busy_scene_config)
    for streams in scene.pedestrians.values():
        for modality in STREAM_FIELDS:
            t = streams.stream(modality)[:, 0]
            assert np.all(np.diff(t) > 0)


def test_camera_triplet_self_consistent(busy_scene_config):
    """Test: (u, v, depth) back-projects to the emitted XYZ"""
    scene = generate_scene(busy_scene_config)
    K = scene.intrinsics
    for streams in scene.pedestrians.values():
        for row in streams.camera:
            np.testing.assert_allclose(unproject(K, row[1:3], row[3]), row[4:7], atol=1e-9)


def test_reference_points_in_view(busy_scene_config):
    """Test: six reference points with pixels inside the image"""
    scene = generate_scene(busy_scene_config)
    assert len(scene.reference_points) == 6
    for ref in scene.reference_points:
        assert 0.0 <= ref.pixel[0] <= scene.intrinsics.width
        assert 0.0 <= ref.pixel[1] <= scene.intrinsics.height


def test_gps_difficulty_increases_error():
    """Test: difficulty 3 gives larger mean GPS error than difficulty 0 over 10 seeds"""
    def mean_error(difficulty):
        errors = []
        for seed in range(10):
            cfg = SceneConfig(duration=20.0, n_pedestrians=1, gps_difficulty=difficulty, seed=seed,
                              noise=NoiseConfig(clock_offset_std=0.0))
            scene = generate_scene(cfg)
            gps = scene.pedestrians["p0"].gps
            truth = scene.trajectories["p0"].position(gps[:, 0])
            for (t, lat, lon, alt), P in zip(gps, truth):
                fix = geodetic_to_enu(GeodeticCoord(latitude=lat, longitude=lon, altitude=alt), cfg.rsu_geodetic)
                errors.append(np.linalg.norm(fix - P))
        return np.mean(errors)

    assert mean_error(3.0) > mean_error(0.0)


def test_camera_sees_nothing_raises(quiet_scene_config):
    """Test: a pedestrian standing behind the camera yields no scene"""
    behind = {"p0": StationaryTrajectory([0.0, -10.0, 0.9])}
    with pytest.raises(CameraSeesNothing):
        generate_scene(quiet_scene_config, trajectories=behind)


# ==================== GPS ====================

def test_gps_without_noise_equals_truth():
    """Test: zero bias and white noise reproduce the trajectory"""
    traj = CircleTrajectory([0.0, 10.0], 3.0, 1.2)
    times = sample_times(20.0, 1.0)
    noise = NoiseConfig.zero()
    bias = gps_bias_sequence(len(times), noise, 0.0, np.random.default_rng(0))
    gps = synthesize_gps(traj, times, bias, noise, ORIGIN, np.random.default_rng(1))
    for (t, lat, lon, alt), P in zip(gps, traj.position(times)):
        fix = geodetic_to_enu(GeodeticCoord(latitude=lat, longitude=lon, altitude=alt), ORIGIN)
        np.testing.assert_allclose(fix, P, atol=1e-6)


def test_gps_bias_shared_between_pedestrians():
    """Test: with white noise off, two pedestrians see the same error vector"""
    times = sample_times(30.0, 1.0)
    noise = NoiseConfig(gps_white_std=0.0)
    bias = gps_bias_sequence(len(times), noise, 1.0, np.random.default_rng(2))
    errors = []
    for traj, seed in ((CircleTrajectory([0.0, 10.0], 3.0, 1.0), 5), (StationaryTrajectory([2.0, 8.0, 0.9]), 6)):
        gps = synthesize_gps(traj, times, bias, noise, ORIGIN, np.random.default_rng(seed))
        fixes = np.array([geodetic_to_enu(GeodeticCoord(latitude=r[1], longitude=r[2], altitude=r[3]), ORIGIN) for r in gps])
        errors.append(fixes - traj.position(times))
    np.testing.assert_allclose(errors[0], errors[1], atol=1e-6)


def test_gps_bias_autocorrelation():
    """Test: lag-1 autocorrelation of the AR(1) bias is about rho"""
    noise = NoiseConfig(gps_bias_std=5.0, gps_bias_rho=0.99)
    bias = gps_bias_sequence(10000, noise, 0.0, np.random.default_rng(3))
    for axis in range(3):
        r = np.corrcoef(bias[:-1, axis], bias[1:, axis])[0, 1]
        assert r == pytest.approx(0.99, abs=0.02)


# ==================== IMU ====================

def test_imu_stationary():
    """Test: a stationary pedestrian measures gravity and no rotation"""
    traj = StationaryTrajectory([1.0, 5.0, 0.9], heading=0.3)
    imu = synthesize_imu(traj, sample_times(2.0, 50.0), NoiseConfig.zero(), np.random.default_rng(0))
    np.testing.assert_allclose(imu[:, 1:4], np.tile([0.0, 0.0, GRAVITY], (len(imu), 1)), atol=1e-12)
    np.testing.assert_allclose(imu[:, 4:7], 0.0, atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(imu[:, 7:10], axis=1), MAG_FIELD_UT, atol=1e-9)


def test_imu_circle_kinematics():
    """Test: circular walk gives centripetal v²/r and yaw rate v/r"""
    r, v = 4.0, 1.2
    traj = CircleTrajectory([0.0, 10.0], r, v)
    imu = synthesize_imu(traj, sample_times(5.0, 50.0), NoiseConfig.zero(), np.random.default_rng(0))
    np.testing.assert_allclose(np.linalg.norm(imu[:, 1:3], axis=1), v * v / r, atol=1e-9)
    np.testing.assert_allclose(imu[:, 3], GRAVITY, atol=1e-12)
    np.testing.assert_allclose(imu[:, 6], v / r, atol=1e-12)
    # centripetal force points to the body's left (+y) on a left turn
    assert np.all(imu[:, 2] > 0)


def test_imu_matches_finite_differences(quiet_scene_config):
    """Test: emitted acceleration agrees with the differentiated trajectory"""
    scene = generate_scene(quiet_scene_config)
    traj = scene.trajectories["p0"]
    times = sample_times(10.0, 50.0)[5:-5]
    h = 1e-4
    fd = (traj.position(times + h) - 2.0 * traj.position(times) + traj.position(times - h)) / (h * h)
    np.testing.assert_allclose(traj.acceleration(times), fd, atol=1e-3)

    imu = synthesize_imu(traj, times, NoiseConfig.zero(), np.random.default_rng(0))
    expected = world_to_body(traj.heading(times), fd + np.array([0.0, 0.0, GRAVITY]))
    np.testing.assert_allclose(imu[:, 1:4], expected, atol=1e-3)


# ==================== FTM / RSSI ====================

def test_ftm_three_four_five():
    """Test: pedestrian at RSU + (3, 4, 0) ranges 5 m"""
    rsu = np.array([0.0, 0.0, 2.6])
    traj = StationaryTrajectory(rsu + [3.0, 4.0, 0.0])
    ftm = synthesize_ftm(traj, sample_times(2.0, 3.0), rsu, NoiseConfig.zero(), np.random.default_rng(0))
    np.testing.assert_allclose(ftm[:, 1], 5.0, atol=1e-12)


def test_ftm_nonnegative_and_reports_std():
    """Test: huge noise is clamped at zero and the std column is the configured value"""
    rsu = np.zeros(3)
    traj = StationaryTrajectory([0.1, 0.0, 0.0])
    noise = NoiseConfig(ftm_std=3.0, ftm_bias=0.0)
    ftm = synthesize_ftm(traj, sample_times(100.0, 3.0), rsu, noise, np.random.default_rng(0))
    assert np.all(ftm[:, 1] >= 0.0)
    assert np.all(ftm[:, 2] == 3.0)


def test_rssi_path_loss():
    """Test: p0 at 1 m, p0 − 20 dB at 10 m for γ = 2"""
    noise = NoiseConfig(rssi_gamma=2.0, rssi_shadow_std=0.0)
    np.testing.assert_allclose(rssi_from_distance(np.array([1.0]), noise), [noise.rssi_p0])
    np.testing.assert_allclose(rssi_from_distance(np.array([10.0]), noise), [noise.rssi_p0 - 20.0])
    # distances below 0.1 m are clamped
    np.testing.assert_allclose(rssi_from_distance(np.array([0.0]), noise), rssi_from_distance(np.array([0.1]), noise))


# ==================== Camera ====================

def test_camera_behind_emits_nothing(rsu_transform, intrinsics):
    """Test: no detections for a pedestrian behind the camera"""
    traj = StationaryTrajectory([0.0, -6.0, 0.9])
    cam = synthesize_camera(traj, sample_times(5.0, 3.0), rsu_transform, intrinsics, NoiseConfig.zero(), np.random.default_rng(0))
    assert cam.shape == (0, 7)


def test_camera_depth_noise_statistics(rsu_transform, intrinsics):
    """Test: empirical depth error std matches the configured fraction"""
    traj = StationaryTrajectory([0.0, 15.0, 0.9])
    noise = NoiseConfig.zero(depth_noise_near=0.01, depth_noise_far=0.09)
    true_depth = world_to_camera(rsu_transform, traj.point)[2]
    cam = synthesize_camera(traj, sample_times(10000 / 3.0, 3.0), rsu_transform, intrinsics, noise, np.random.default_rng(4))
    assert len(cam) > 9900
    expected = depth_noise_fraction(true_depth, noise) * true_depth
    assert np.std(cam[:, 3] - true_depth) == pytest.approx(expected, rel=0.1)
    assert depth_noise_fraction(20.0, noise) == pytest.approx(0.09)
    assert depth_noise_fraction(0.0, noise) == pytest.approx(0.01)
