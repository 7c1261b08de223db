"""
Synthetic scene simulator

Generates one sequence of a roadside-unit scenario:
- Pedestrian centroid trajectories (random waypoints, spline-smoothed, with gait bob and sway)
- Camera detections at 3 Hz (pixel, depth, back-projected camera-frame 3D)
- Phone FTM ranges and RSSI at 3 Hz, 9-axis IMU at 50 Hz, GPS at 1 Hz
- Surveyed reference points and RSU position with survey noise

The camera stream runs on the reference clock; every phone stream carries
its own clock offset. Everything is deterministic given (seed, scene_id, sequence).
"""

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from scipy.interpolate import CubicSpline

from errors import CameraSeesNothing, PointBehindCamera
from logger import get_logger
from models import (
    CameraIntrinsics,
    GeodeticCoord,
    NoiseConfig,
    ReferencePoint,
    SceneConfig,
    WorldCameraTransform,
)
from src.geodesy import (
    camera_origin_world,
    camera_pose_from_yaw_pitch,
    enu_to_geodetic,
    project,
    unproject,
    world_to_camera,
)
from src.seeding import derive_rng

logger = get_logger(__name__)

GRAVITY = 9.81
MAG_FIELD_UT = 50.0
CAMERA_RATE = 3.0
FTM_RATE = 3.0
RSSI_RATE = 3.0
IMU_RATE = 50.0
GPS_RATE = 1.0
TRUTH_RATE = 50.0
MIN_DEPTH = 0.2
MAX_DEPTH = 20.0
KNOT_SPACING = 2.0

# Column layout of every stream array; column 0 is always the timestamp
STREAM_FIELDS: Dict[str, tuple] = {
    "camera": ("t", "u", "v", "depth", "X", "Y", "Z"),
    "ftm": ("t", "range", "std"),
    "imu": ("t", "ax", "ay", "az", "gx", "gy", "gz", "mx", "my", "mz"),
    "gps": ("t", "lat", "lon", "alt"),
    "rssi": ("t", "rssi"),
    "truth": ("t", "X", "Y", "Z"),
}


# ==================== Data Types ====================

@dataclass
class PedestrianStreams:
    """All sensor streams of one pedestrian; arrays follow STREAM_FIELDS"""
    ped_id: str
    camera: np.ndarray
    ftm: np.ndarray
    imu: np.ndarray
    gps: np.ndarray
    rssi: np.ndarray
    truth: np.ndarray

    def stream(self, modality: str) -> np.ndarray:
        return getattr(self, modality)


@dataclass
class Scene:
    """
    One simulated sequence.

    trajectories are kept in memory only; scenes read back from disk carry the
    50 Hz truth stream instead.
    """
    config: SceneConfig
    transform: WorldCameraTransform
    reference_points: List[ReferencePoint]
    surveyed_rsu: np.ndarray
    pedestrians: Dict[str, PedestrianStreams]
    trajectories: Dict[str, "Trajectory"] = field(default_factory=dict)

    @property
    def origin(self) -> GeodeticCoord:
        return self.config.rsu_geodetic

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return self.config.intrinsics

    @property
    def rsu_world(self) -> np.ndarray:
        """True camera / access point position (co-located)"""
        return camera_origin_world(self.transform)


# ==================== Trajectories ====================

class Trajectory(ABC):
    """
    Smooth world-frame centroid path.

    Body frame: x along the body heading, y to the left, z up.
    heading() is the body yaw measured counter-clockwise from east.
    """

    @abstractmethod
    def position(self, t: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def velocity(self, t: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def acceleration(self, t: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def heading(self, t: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def yaw_rate(self, t: np.ndarray) -> np.ndarray:
        ...


class SplineTrajectory(Trajectory):
    """Cubic spline through waypoint knots plus vertical gait bob and heading sway"""

    def __init__(
        self,
        knot_times: np.ndarray,
        knots: np.ndarray,
        base_height: float,
        bob_amplitude: float,
        gait_hz: float,
        sway_rad: float,
        phase: float = 0.0,
    ):
        self.spline = CubicSpline(knot_times, knots, axis=0)
        self.spline_d1 = self.spline.derivative(1)
        self.spline_d2 = self.spline.derivative(2)
        self.base_height = base_height
        self.bob_amplitude = bob_amplitude
        self.omega = 2.0 * math.pi * gait_hz
        self.sway_rad = sway_rad
        self.phase = phase

    def position(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        z = self.base_height + self.bob_amplitude * np.sin(self.omega * t + self.phase)
        return np.column_stack([self.spline(t), z])

    def velocity(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        vz = self.bob_amplitude * self.omega * np.cos(self.omega * t + self.phase)
        return np.column_stack([self.spline_d1(t), vz])

    def acceleration(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        az = -self.bob_amplitude * self.omega ** 2 * np.sin(self.omega * t + self.phase)
        return np.column_stack([self.spline_d2(t), az])

    def heading(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        v = self.spline_d1(t)
        # body sway runs at half the step frequency (one cycle per stride)
        sway = self.sway_rad * np.sin(0.5 * self.omega * t + self.phase)
        return np.arctan2(v[:, 1], v[:, 0]) + sway

    def yaw_rate(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        v = self.spline_d1(t)
        a = self.spline_d2(t)
        speed2 = v[:, 0] ** 2 + v[:, 1] ** 2
        turn = np.where(speed2 > 1e-12, (v[:, 0] * a[:, 1] - v[:, 1] * a[:, 0]) / np.maximum(speed2, 1e-12), 0.0)
        sway = self.sway_rad * 0.5 * self.omega * np.cos(0.5 * self.omega * t + self.phase)
        return turn + sway


def _walk_point(cfg: SceneConfig, rng: np.random.Generator) -> np.ndarray:
    yaw = math.radians(cfg.camera_yaw)
    ahead = np.array([math.sin(yaw), math.cos(yaw)])
    right = np.array([math.cos(yaw), -math.sin(yaw)])
    forward = rng.uniform(cfg.walk_near, cfg.walk_far)
    lateral = rng.uniform(-cfg.walk_half_width, cfg.walk_half_width)
    return forward * ahead + lateral * right


def random_waypoint_trajectory(cfg: SceneConfig, rng: np.random.Generator) -> SplineTrajectory:
    """
    Random-waypoint walk inside the camera's walking area.

    Legs between waypoints are walked at a per-leg speed drawn from
    [speed_min, speed_max] and subdivided into knots about every 2 m.
    """
    horizon = cfg.duration + 2.0
    times = [0.0]
    knots = [_walk_point(cfg, rng)]
    while times[-1] < horizon:
        target = _walk_point(cfg, rng)
        length = float(np.linalg.norm(target - knots[-1]))
        if length < 1.0:
            continue
        speed = rng.uniform(cfg.speed_min, cfg.speed_max)
        pieces = max(1, int(math.ceil(length / KNOT_SPACING)))
        start, t0 = knots[-1], times[-1]
        for k in range(1, pieces + 1):
            frac = k / pieces
            knots.append(start + frac * (target - start))
            times.append(t0 + frac * length / speed)
    return SplineTrajectory(
        knot_times=np.array(times),
        knots=np.array(knots),
        base_height=cfg.centroid_height,
        bob_amplitude=cfg.bob_amplitude,
        gait_hz=cfg.gait_hz,
        sway_rad=math.radians(cfg.sway_amplitude),
        phase=rng.uniform(0.0, 2.0 * math.pi),
    )


def sample_times(duration: float, rate: float) -> np.ndarray:
    """Uniform ticks k/rate covering [0, duration)"""
    n = int(math.ceil(duration * rate - 1e-9))
    return np.arange(n) / rate


# ==================== Sensor Models ====================

def world_to_body(heading: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """Rotate world ENU vectors (N, 3) into the body frame for headings (N,)"""
    c = np.cos(heading)
    s = np.sin(heading)
    x = c * vectors[:, 0] + s * vectors[:, 1]
    y = -s * vectors[:, 0] + c * vectors[:, 1]
    return np.column_stack([x, y, vectors[:, 2]])


def synthesize_imu(
    traj: Trajectory,
    times: np.ndarray,
    noise: NoiseConfig,
    rng: np.random.Generator,
    clock_offset: float = 0.0,
) -> np.ndarray:
    """
    9-axis IMU: specific force, yaw rate and magnetic field in the body frame

    Returns:
        (N, 10) array [t, ax, ay, az, gx, gy, gz, mx, my, mz]
    """
    n = len(times)
    heading = traj.heading(times)
    specific = traj.acceleration(times) + np.array([0.0, 0.0, GRAVITY])
    accel = world_to_body(heading, specific)
    gyro = np.column_stack([np.zeros(n), np.zeros(n), traj.yaw_rate(times)])
    north = np.tile([0.0, MAG_FIELD_UT, 0.0], (n, 1))
    mag = world_to_body(heading, north)

    accel = accel + rng.normal(0.0, noise.imu_accel_std, (n, 3))
    gyro = gyro + rng.normal(0.0, noise.imu_gyro_std, (n, 3))
    mag = mag + rng.normal(0.0, noise.imu_mag_std, (n, 3))
    return np.column_stack([times + clock_offset, accel, gyro, mag])


def gps_bias_sequence(n_epochs: int, noise: NoiseConfig, difficulty: float, rng: np.random.Generator) -> np.ndarray:
    """
    Scene-shared AR(1) GPS bias, one row per 1 Hz epoch

    b_0 ~ N(0, s²I), b_{k+1} = ρ·b_k + w_k, w_k ~ N(0, s²(1−ρ²)I), s = σ_bias·(1 + difficulty)
    """
    scale = noise.gps_bias_std * (1.0 + difficulty)
    rho = noise.gps_bias_rho
    innovation = scale * math.sqrt(1.0 - rho * rho)
    bias = np.zeros((n_epochs, 3))
    if n_epochs == 0:
        return bias
    bias[0] = rng.normal(0.0, scale, 3)
    steps = rng.normal(0.0, innovation, (max(n_epochs - 1, 0), 3))
    for k in range(1, n_epochs):
        bias[k] = rho * bias[k - 1] + steps[k - 1]
    return bias


def synthesize_gps(
    traj: Trajectory,
    times: np.ndarray,
    bias: np.ndarray,
    noise: NoiseConfig,
    origin: GeodeticCoord,
    rng: np.random.Generator,
    clock_offset: float = 0.0,
) -> np.ndarray:
    """
    GPS fixes: truth + shared bias + per-fix white noise, emitted as geodetic

    Returns:
        (N, 4) array [t, lat, lon, alt]
    """
    truth = traj.position(times)
    error = bias[: len(times)] + rng.normal(0.0, noise.gps_white_std, (len(times), 3))
    rows = []
    for t, P in zip(times, truth + error):
        g = enu_to_geodetic(P, origin)
        rows.append((t + clock_offset, g.latitude, g.longitude, g.altitude))
    return np.array(rows, dtype=np.float64).reshape(-1, 4)


def synthesize_ftm(
    traj: Trajectory,
    times: np.ndarray,
    rsu: np.ndarray,
    noise: NoiseConfig,
    rng: np.random.Generator,
    clock_offset: float = 0.0,
) -> np.ndarray:
    """
    FTM ranging to the RSU: ‖p − rsu‖ + bias + N(0, std²), clamped at 0

    Returns:
        (N, 3) array [t, range, std]
    """
    distance = np.linalg.norm(traj.position(times) - rsu, axis=1)
    ranged = np.maximum(distance + noise.ftm_bias + rng.normal(0.0, noise.ftm_std, len(times)), 0.0)
    return np.column_stack([times + clock_offset, ranged, np.full(len(times), noise.ftm_std)])


def rssi_from_distance(distance: np.ndarray, noise: NoiseConfig) -> np.ndarray:
    """Log-distance path loss without shadowing"""
    return noise.rssi_p0 - 10.0 * noise.rssi_gamma * np.log10(np.maximum(distance, 0.1))


def synthesize_rssi(
    traj: Trajectory,
    times: np.ndarray,
    rsu: np.ndarray,
    noise: NoiseConfig,
    rng: np.random.Generator,
    clock_offset: float = 0.0,
) -> np.ndarray:
    """
    Returns:
        (N, 2) array [t, rssi_dbm]
    """
    distance = np.linalg.norm(traj.position(times) - rsu, axis=1)
    rssi = rssi_from_distance(distance, noise) + rng.normal(0.0, noise.rssi_shadow_std, len(times))
    return np.column_stack([times + clock_offset, rssi])


def depth_noise_fraction(depth: float, noise: NoiseConfig) -> float:
    """Relative depth error std, linear from near to far over the configured range"""
    frac = min(max(depth, 0.0) / noise.depth_noise_range, 1.0)
    return noise.depth_noise_near + (noise.depth_noise_far - noise.depth_noise_near) * frac


def synthesize_camera(
    traj: Trajectory,
    times: np.ndarray,
    T: WorldCameraTransform,
    K: CameraIntrinsics,
    noise: NoiseConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """
    RGBD detections of the bounding-box centroid

    Each tick draws the dropout, pixel and depth noise in a fixed order whether or
    not the pedestrian is visible, so visibility never shifts later draws.

    Returns:
        (N, 7) array [t, u, v, depth, X, Y, Z]; camera-frame XYZ is the noisy
        pixel back-projected at the noisy depth
    """
    rows = []
    positions = traj.position(times)
    for t, P in zip(times, positions):
        dropped = rng.random() < noise.detection_dropout_prob
        pixel_noise = rng.normal(0.0, noise.bbox_pixel_std, 2)
        depth_noise = rng.normal(0.0, 1.0)
        if dropped:
            continue
        X = world_to_camera(T, P)
        try:
            pixel_true = project(K, T, P)
        except PointBehindCamera:
            continue
        depth = X[2] * (1.0 + depth_noise_fraction(X[2], noise) * depth_noise)
        pixel = pixel_true + pixel_noise
        if not MIN_DEPTH <= depth <= MAX_DEPTH:
            continue
        if not (0.0 <= pixel[0] < K.width and 0.0 <= pixel[1] < K.height):
            continue
        rows.append((t, pixel[0], pixel[1], depth, *unproject(K, pixel, depth)))
    return np.array(rows, dtype=np.float64).reshape(-1, 7)


# ==================== Reference Points ====================

def place_reference_points(
    cfg: SceneConfig,
    T: WorldCameraTransform,
    rng: np.random.Generator,
) -> List[ReferencePoint]:
    """
    Surveyed calibration points in view of the camera

    True points lie 5–16 m ahead at 0–1.5 m height; the stored world position
    and pixel carry survey noise.
    """
    K = cfg.intrinsics
    noise = cfg.noise
    yaw = math.radians(cfg.camera_yaw)
    ahead = np.array([math.sin(yaw), math.cos(yaw), 0.0])
    right = np.array([math.cos(yaw), -math.sin(yaw), 0.0])
    half_fov = K.cx / K.fx

    refs = []
    attempts = 0
    while len(refs) < cfg.n_reference_points:
        attempts += 1
        if attempts > 10000:
            raise CameraSeesNothing("Could not place reference points inside the image")
        forward = rng.uniform(5.0, 16.0)
        lateral = rng.uniform(-0.6, 0.6) * forward * half_fov
        height = rng.uniform(0.0, 1.5)
        P = forward * ahead + lateral * right + np.array([0.0, 0.0, height])
        try:
            pixel = project(K, T, P)
        except PointBehindCamera:
            continue
        if not (0.0 <= pixel[0] < K.width and 0.0 <= pixel[1] < K.height):
            continue
        refs.append(ReferencePoint(
            world=P + rng.normal(0.0, noise.survey_world_std, 3),
            pixel=np.clip(pixel + rng.normal(0.0, noise.survey_pixel_std, 2), 0.0, [K.width, K.height]),
        ))
    return refs


# ==================== Scene Generation ====================

def _pedestrian_streams(
    ped_id: str,
    traj: Trajectory,
    cfg: SceneConfig,
    T: WorldCameraTransform,
    rsu: np.ndarray,
    gps_bias: np.ndarray,
) -> PedestrianStreams:
    noise = cfg.noise

    def rng_for(stream: str) -> np.random.Generator:
        return derive_rng(cfg.seed, "scene", cfg.scene_id, cfg.sequence, ped_id, stream)

    offsets = rng_for("clock").normal(0.0, noise.clock_offset_std, 4)
    truth_times = sample_times(cfg.duration, TRUTH_RATE)
    return PedestrianStreams(
        ped_id=ped_id,
        camera=synthesize_camera(traj, sample_times(cfg.duration, CAMERA_RATE), T, cfg.intrinsics, noise, rng_for("camera")),
        ftm=synthesize_ftm(traj, sample_times(cfg.duration, FTM_RATE), rsu, noise, rng_for("ftm"), offsets[0]),
        imu=synthesize_imu(traj, sample_times(cfg.duration, IMU_RATE), noise, rng_for("imu"), offsets[1]),
        gps=synthesize_gps(traj, sample_times(cfg.duration, GPS_RATE), gps_bias, noise, cfg.rsu_geodetic, rng_for("gps"), offsets[2]),
        rssi=synthesize_rssi(traj, sample_times(cfg.duration, RSSI_RATE), rsu, noise, rng_for("rssi"), offsets[3]),
        truth=np.column_stack([truth_times, traj.position(truth_times)]),
    )


def generate_scene(cfg: SceneConfig, trajectories: Optional[Dict[str, Trajectory]] = None) -> Scene:
    """
    Simulate one sequence

    Args:
        cfg: Scene configuration
        trajectories: Optional explicit trajectories keyed by pedestrian id;
                      random waypoint walks are drawn when omitted

    Raises:
        CameraSeesNothing: no pedestrian ever produced a camera detection
    """
    T = camera_pose_from_yaw_pitch(cfg.camera_yaw, cfg.camera_pitch, cfg.camera_height)
    rsu = camera_origin_world(T)

    if trajectories is None:
        trajectories = {}
        for i in range(cfg.n_pedestrians):
            ped_id = f"p{i}"
            walk_rng = derive_rng(cfg.seed, "scene", cfg.scene_id, cfg.sequence, ped_id, "walk")
            trajectories[ped_id] = random_waypoint_trajectory(cfg, walk_rng)

    n_epochs = len(sample_times(cfg.duration, GPS_RATE))
    gps_bias = gps_bias_sequence(
        n_epochs, cfg.noise, cfg.gps_difficulty,
        derive_rng(cfg.seed, "scene", cfg.scene_id, cfg.sequence, "gps_bias"),
    )

    pedestrians = {
        ped_id: _pedestrian_streams(ped_id, traj, cfg, T, rsu, gps_bias)
        for ped_id, traj in trajectories.items()
    }

    detections = sum(len(streams.camera) for streams in pedestrians.values())
    if detections == 0:
        raise CameraSeesNothing(f"No pedestrian entered the field of view in scene {cfg.scene_id}")

    survey_rng = derive_rng(cfg.seed, "scene", cfg.scene_id, "survey")
    refs = place_reference_points(cfg, T, survey_rng)
    surveyed_rsu = rsu + survey_rng.normal(0.0, cfg.noise.rsu_survey_std, 3)

    logger.info("Scene generated",
                scene_id=cfg.scene_id,
                sequence=cfg.sequence,
                pedestrians=len(pedestrians),
                detections=detections,
                duration=cfg.duration)

    return Scene(
        config=cfg,
        transform=T,
        reference_points=refs,
        surveyed_rsu=surveyed_rsu,
        pedestrians=pedestrians,
        trajectories=dict(trajectories),
    )
