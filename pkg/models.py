"""
Pydantic models for the viloc localization pipeline

Groups:
- Geometry: geodetic coordinates, intrinsics, world-camera transforms, reference points
- Configuration: scene/noise simulation, training, particle filter, perturbation,
  feature masks, self-training
- Records and reports: dataset JSONL records, loss reports, error statistics,
  association results, result tables

Array-valued fields are numpy arrays validated for shape and finiteness on the
way in and serialized as nested lists on the way out.
"""

import math
from typing import Annotated, List, Optional, Union

import numpy as np
from pydantic import (
    BaseModel,
    BeforeValidator,
    ConfigDict,
    Field,
    PlainSerializer,
    field_validator,
    model_validator,
)


# ==================== Array Field Types ====================

def _array_of(shape: tuple[int, ...]):
    def convert(value):
        arr = np.array(value, dtype=np.float64)
        if arr.shape != shape:
            raise ValueError(f"expected shape {shape}, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("components must be finite")
        return arr
    return convert


def _to_list(arr: np.ndarray) -> list:
    return np.asarray(arr).tolist()


Vector2 = Annotated[np.ndarray, BeforeValidator(_array_of((2,))), PlainSerializer(_to_list, return_type=list)]
Vector3 = Annotated[np.ndarray, BeforeValidator(_array_of((3,))), PlainSerializer(_to_list, return_type=list)]
Matrix3 = Annotated[np.ndarray, BeforeValidator(_array_of((3, 3))), PlainSerializer(_to_list, return_type=list)]

# Scene-local ENU point [X_W, Y_W, Z_W] in meters; (u, v) pixel position.
# Both travel as plain float64 arrays through the numeric code.
WorldPoint = np.ndarray
PixelCoord = np.ndarray


# ==================== Geometry ====================

class GeodeticCoord(BaseModel):
    """WGS84 geodetic position (GPS format)"""
    latitude: float = Field(..., ge=-90.0, le=90.0, description="Degrees")
    longitude: float = Field(..., ge=-180.0, le=180.0, description="Degrees")
    altitude: float = Field(0.0, description="Meters above the WGS84 ellipsoid")


class CameraIntrinsics(BaseModel):
    """
    Pinhole intrinsics K (no distortion model).

    Camera frame convention used everywhere: +z forward, +x right, +y down.
    """
    fx: float = Field(700.0, gt=0, description="Focal length along u (px)")
    fy: float = Field(700.0, gt=0, description="Focal length along v (px)")
    cx: float = Field(640.0, description="Principal point u (px)")
    cy: float = Field(360.0, description="Principal point v (px)")
    width: int = Field(1280, gt=0, description="Image width (px)")
    height: int = Field(720, gt=0, description="Image height (px)")

    @model_validator(mode="after")
    def check_principal_point(self) -> "CameraIntrinsics":
        if not 0 < self.cx < self.width:
            raise ValueError("cx must lie strictly inside the image width")
        if not 0 < self.cy < self.height:
            raise ValueError("cy must lie strictly inside the image height")
        return self

    def matrix(self) -> np.ndarray:
        return np.array([
            [self.fx, 0.0, self.cx],
            [0.0, self.fy, self.cy],
            [0.0, 0.0, 1.0],
        ])


class WorldCameraTransform(BaseModel):
    """
    Rigid transform x' = R·x + t.

    In world->camera form this is ^C T_W = [^C R_W  ^C t_W]; the same type holds
    the camera->world form ^W T_C produced by invert_transform.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    rotation: Matrix3
    translation: Vector3

    @model_validator(mode="after")
    def check_rotation(self) -> "WorldCameraTransform":
        r = self.rotation
        if np.max(np.abs(r.T @ r - np.eye(3))) > 1e-9:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("rotation determinant must be +1")
        return self

    @classmethod
    def identity(cls) -> "WorldCameraTransform":
        return cls(rotation=np.eye(3), translation=np.zeros(3))


class ReferencePoint(BaseModel):
    """Surveyed 3D-2D correspondence (P_i in world ENU, p_i in pixels)"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    world: Vector3
    pixel: Vector2


class ReferencePointRecord(BaseModel):
    """One line of a reference-point JSONL file"""
    lat: float = Field(..., ge=-90.0, le=90.0)
    lon: float = Field(..., ge=-180.0, le=180.0)
    alt: float
    u: float
    v: float


class CalibrationResult(BaseModel):
    """Selected world->camera transform with its quality metrics"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    transform: WorldCameraTransform
    reprojection_avg: float = Field(..., ge=0, description="Mean reprojection error (px)")
    reprojection_std: float = Field(..., ge=0, description="Population std of reprojection error (px)")
    rsu_error: Optional[float] = Field(None, ge=0, description="Estimated vs surveyed RSU distance (m)")
    subset: List[int] = Field(default_factory=list, description="Winning 4-subset; validation point last")
    candidates: int = Field(0, ge=0, description="Number of candidate poses examined")


class PerturbationSpec(BaseModel):
    """Gaussian perturbation of the camera->world transform"""
    sigma_theta: float = Field(0.0, ge=0, description="Std of each rotation angle (degrees)")
    sigma_t: float = Field(0.0, ge=0, description="Std of each translation component (m)")
    seed: int = 0


# ==================== Simulation Configuration ====================

class NoiseConfig(BaseModel):
    """Sensor noise models for the synthetic scenes"""
    depth_noise_near: float = Field(0.01, ge=0, description="Depth noise fraction at range 0")
    depth_noise_far: float = Field(0.09, ge=0, description="Depth noise fraction at depth_noise_range")
    depth_noise_range: float = Field(20.0, gt=0, description="Range (m) where the far fraction applies")
    bbox_pixel_std: float = Field(2.0, ge=0, description="Bounding-box centroid noise (px)")
    ftm_std: float = Field(1.0, ge=0, description="FTM range noise (m), also the reported std")
    ftm_bias: float = Field(0.5, description="FTM range bias (m)")
    imu_accel_std: float = Field(0.1, ge=0, description="m/s^2")
    imu_gyro_std: float = Field(0.01, ge=0, description="rad/s")
    imu_mag_std: float = Field(1.0, ge=0, description="uT")
    gps_white_std: float = Field(1.0, ge=0, description="Per-fix white noise (m)")
    gps_bias_std: float = Field(5.0, ge=0, description="Stationary std of the shared bias (m)")
    gps_bias_rho: float = Field(0.99, ge=0, lt=1, description="AR(1) coefficient per 1 Hz epoch")
    rssi_p0: float = Field(-40.0, description="RSSI at 1 m (dBm)")
    rssi_gamma: float = Field(2.2, gt=0, description="Path-loss exponent")
    rssi_shadow_std: float = Field(4.0, ge=0, description="Shadowing (dB)")
    detection_dropout_prob: float = Field(0.05, ge=0, lt=1)
    clock_offset_std: float = Field(0.1, ge=0, description="Per phone stream clock offset (s)")
    survey_world_std: float = Field(1.0, ge=0, description="Reference point survey error (m)")
    survey_pixel_std: float = Field(3.0, ge=0, description="Reference point pixel picking error (px)")
    rsu_survey_std: float = Field(1.0, ge=0, description="Surveyed RSU position error (m)")

    @classmethod
    def zero(cls, **overrides) -> "NoiseConfig":
        """Noise-free configuration; every stream equals its analytic ground truth"""
        values = dict(
            depth_noise_near=0.0, depth_noise_far=0.0, bbox_pixel_std=0.0,
            ftm_std=0.0, ftm_bias=0.0, imu_accel_std=0.0, imu_gyro_std=0.0,
            imu_mag_std=0.0, gps_white_std=0.0, gps_bias_std=0.0,
            rssi_shadow_std=0.0, detection_dropout_prob=0.0, clock_offset_std=0.0,
            survey_world_std=0.0, survey_pixel_std=0.0, rsu_survey_std=0.0,
        )
        values.update(overrides)
        return cls(**values)


class SceneConfig(BaseModel):
    """
    One simulated sequence of a scenario.

    Sequences of the same scenario share scene_id (RSU pose, intrinsics,
    reference points) and differ in sequence/seed.
    """
    scene_id: str = "scene1"
    sequence: int = Field(0, ge=0)
    duration: float = Field(180.0, gt=0, description="Seconds (3-minute sequences)")
    n_pedestrians: int = Field(3, ge=1)
    rsu_geodetic: GeodeticCoord = Field(
        default_factory=lambda: GeodeticCoord(latitude=40.5, longitude=-74.45, altitude=30.0),
        description="RSU ground point; origin of the scene ENU frame",
    )
    camera_height: float = Field(2.6, ge=2.4, le=2.8, description="Meters above ground")
    camera_yaw: float = Field(0.0, description="Optical-axis azimuth, degrees clockwise from north")
    camera_pitch: float = Field(15.0, description="Downward tilt (degrees)")
    intrinsics: CameraIntrinsics = Field(default_factory=CameraIntrinsics)
    noise: NoiseConfig = Field(default_factory=NoiseConfig)
    gps_difficulty: float = Field(0.0, ge=0, description="Urban-canyon severity scaling the GPS bias")
    seed: int = 0

    # Walking area, relative to the camera heading
    walk_near: float = Field(4.0, gt=0)
    walk_far: float = Field(18.0, gt=0)
    walk_half_width: float = Field(8.0, gt=0)
    speed_min: float = Field(0.8, gt=0)
    speed_max: float = Field(1.6, gt=0)
    gait_hz: float = Field(2.0, gt=0)
    bob_amplitude: float = Field(0.03, ge=0, description="Vertical gait oscillation (m)")
    sway_amplitude: float = Field(5.0, ge=0, description="Body heading oscillation (degrees)")
    centroid_height: float = Field(0.9, gt=0, description="Bounding-box centroid height (m)")
    n_reference_points: int = Field(6, ge=4)

    @model_validator(mode="after")
    def check_ranges(self) -> "SceneConfig":
        if self.walk_far <= self.walk_near:
            raise ValueError("walk_far must exceed walk_near")
        if self.speed_max < self.speed_min:
            raise ValueError("speed_max must be >= speed_min")
        return self


# ==================== Learning Configuration ====================

class TrainConfig(BaseModel):
    """Adversarial training recipe"""
    epochs: int = Field(200, ge=0)
    batch_size: int = Field(32, ge=2)
    lr: float = Field(1e-3, gt=0)
    lr_late: float = Field(1e-4, gt=0, description="Learning rate after lr_decay_epoch")
    lr_decay_epoch: int = Field(100, ge=0, description="Last epoch trained at lr")
    dropout_rate: float = Field(0.2, ge=0, lt=1)
    leaky_slope: float = Field(0.2, ge=0)
    seed: int = 0

    def lr_at(self, epoch: int) -> float:
        """Learning rate for a 1-indexed epoch"""
        return self.lr if epoch <= self.lr_decay_epoch else self.lr_late


class ParticleFilterConfig(BaseModel):
    """GPS + FTM particle filter baseline"""
    n_particles: int = Field(1000, ge=10)
    process_noise_std: float = Field(0.5, gt=0, description="Random-walk std (m/sqrt(s))")
    gps_meas_std: float = Field(5.0, gt=0, description="GPS likelihood std (m)")
    resample_threshold: float = Field(0.5, gt=0, le=1, description="ESS fraction triggering resampling")
    vertical_noise_scale: float = Field(0.1, gt=0, description="Process-noise multiplier along up")
    seed: int = 0


_MASK_TOKENS = ("FTM", "RSSI", "IMU", "GPS")


class FeatureMask(BaseModel):
    """Which phone feature groups feed the phone encoder"""
    ftm: bool = True
    imu: bool = True
    gps: bool = True
    rssi: bool = False

    @model_validator(mode="after")
    def check_not_empty(self) -> "FeatureMask":
        if not (self.ftm or self.imu or self.gps or self.rssi):
            raise ValueError("at least one feature group must be enabled")
        return self

    @property
    def width(self) -> int:
        return 2 * self.ftm + self.rssi + 9 * self.imu + 3 * self.gps

    @property
    def label(self) -> str:
        enabled = {"FTM": self.ftm, "RSSI": self.rssi, "IMU": self.imu, "GPS": self.gps}
        return " + ".join(token for token in _MASK_TOKENS if enabled[token])

    @classmethod
    def parse(cls, text: str) -> "FeatureMask":
        """Parse 'FTM+IMU+GPS' style labels (case and spaces ignored)"""
        tokens = {t.strip().upper() for t in text.split("+") if t.strip()}
        unknown = tokens - set(_MASK_TOKENS)
        if unknown:
            raise ValueError(f"Unknown feature groups: {sorted(unknown)}")
        return cls(ftm="FTM" in tokens, imu="IMU" in tokens, gps="GPS" in tokens, rssi="RSSI" in tokens)


class SelfTrainConfig(BaseModel):
    """Associate-expand-finetune loop"""
    iterations: int = Field(1, ge=1)
    finetune_epochs: int = Field(50, ge=0)
    finetune_lr: float = Field(1e-4, gt=0)
    max_distance: float = Field(math.inf, gt=0, description="Association gate (m); inf disables it")
    include_phone_only: bool = Field(False, description="Also associate phones the camera never saw")
    labeled_ped: str = Field("p0", description="Pedestrian whose windows form the labeled set")


# ==================== Records & Reports ====================

class CorrespondenceRecord(BaseModel):
    """
    One JSONL dataset line.

    v is 10 steps x [d, x, y, X, Y, Z]; p is 10 steps x [r_ftm, std_ftm, acc(3),
    gyr(3), mag(3), gps(3)]. Phone-only records carry v = c_gnd = None.
    """
    scene: str
    seq: int = 0
    ped: str
    t0: float
    v: Optional[List[List[float]]] = None
    p: List[List[float]]
    rssi: List[float]
    c_gnd: Optional[List[float]] = None
    minted: bool = False
    matched: Optional[str] = None
    pf: Optional[List[float]] = None

    @field_validator("v")
    @classmethod
    def check_vision(cls, v):
        if v is not None and (len(v) != 10 or any(len(row) != 6 for row in v)):
            raise ValueError("v must be 10 x 6")
        return v

    @field_validator("p")
    @classmethod
    def check_phone(cls, p):
        if len(p) != 10 or any(len(row) != 14 for row in p):
            raise ValueError("p must be 10 x 14")
        return p

    @field_validator("rssi")
    @classmethod
    def check_rssi(cls, rssi):
        if len(rssi) != 10:
            raise ValueError("rssi must have 10 steps")
        return rssi

    @field_validator("c_gnd", "pf")
    @classmethod
    def check_coordinate(cls, c):
        if c is not None and len(c) != 3:
            raise ValueError("coordinates must have 3 components")
        return c


class LossReport(BaseModel):
    """Per-epoch mean of every loss component"""
    epoch: int
    l_emb: float
    l_d: float
    l_g_adv: float
    l_reg: float
    l_total: float
    lr: float


class ErrorStats(BaseModel):
    """Localization error summary (meters)"""
    avg: float = Field(..., ge=0)
    std: float = Field(..., ge=0)
    med: float = Field(..., ge=0)
    p95: float = Field(..., ge=0)
    n: int = Field(..., ge=0)


class AssociationResult(BaseModel):
    """Nearest camera detection for one phone identity"""
    phone_id: str
    matched_camera_id: str
    camera_index: int = Field(..., ge=0)
    distance: float = Field(..., ge=0)
    is_correct: Optional[bool] = None


class SelfTrainReport(BaseModel):
    """One row of the self-learning table"""
    iteration: int
    precision: float
    minted_count: int
    pre_error: float
    post_error: float


class ResultTable(BaseModel):
    """Experiment output ready for CSV/markdown emission"""
    title: str
    header: List[str]
    rows: List[List[Union[str, int, float]]]
