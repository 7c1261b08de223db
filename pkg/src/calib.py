"""
World-camera calibration from surveyed reference points

Pipeline:
1. Reference points (lat/lon/alt + pixel) are converted into the scene ENU frame
2. Every 4-point subset is solved by P3P on three points, the fourth validating
3. The candidate with the lowest full-set reprojection error wins

Also hosts the controlled perturbation of the camera-world transform used by
the robustness sweep.
"""

import itertools
import math
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import polar
from scipy.spatial.transform import Rotation

from errors import (
    AllSubsetsDegenerate,
    DataError,
    DegenerateConfiguration,
    NoRealSolution,
    PointBehindCamera,
)
from logger import get_logger
from models import (
    CalibrationResult,
    CameraIntrinsics,
    GeodeticCoord,
    PerturbationSpec,
    ReferencePoint,
    ReferencePointRecord,
    WorldCameraTransform,
)
from src.geodesy import bearing, camera_origin_world, geodetic_to_enu, project
from src.seeding import derive_rng

logger = get_logger(__name__)

COLLINEAR_TOL = 1e-9
COINCIDENT_RAY_TOL = 1e-12
NEWTON_STEPS = 3


# ==================== Reference Points ====================

def reference_points_to_world(
    records: Iterable[ReferencePointRecord],
    origin: GeodeticCoord,
) -> List[ReferencePoint]:
    """Convert surveyed lat/lon/alt + pixel records into ENU reference points"""
    points = []
    for record in records:
        world = geodetic_to_enu(
            GeodeticCoord(latitude=record.lat, longitude=record.lon, altitude=record.alt),
            origin,
        )
        points.append(ReferencePoint(world=world, pixel=[record.u, record.v]))
    return points


# ==================== Reprojection ====================

def reprojection_errors(T: WorldCameraTransform, K: CameraIntrinsics, refs: Sequence[ReferencePoint]) -> np.ndarray:
    """Per-point pixel distance between projection and observation"""
    return np.array([np.linalg.norm(project(K, T, ref.world) - ref.pixel) for ref in refs])


def reprojection_error(T: WorldCameraTransform, K: CameraIntrinsics, refs: Sequence[ReferencePoint]) -> Tuple[float, float]:
    """
    Mean and population standard deviation of the reprojection error

    Raises:
        PointBehindCamera: a reference point has camera depth <= 0 under T
    """
    errors = reprojection_errors(T, K, refs)
    return float(np.mean(errors)), float(np.std(errors))


# ==================== P3P ====================

def _rigid_fit(world: np.ndarray, camera: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Least-squares R, t with camera ≈ R·world + t (Kabsch)"""
    world_c = world.mean(axis=0)
    camera_c = camera.mean(axis=0)
    H = (world - world_c).T @ (camera - camera_c)
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    rotation = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return rotation, camera_c - rotation @ world_c


def _polish(poly: np.poly1d, root: float) -> float:
    derivative = poly.deriv()
    for _ in range(NEWTON_STEPS):
        slope = derivative(root)
        if slope == 0.0:
            break
        root = root - poly(root) / slope
    return root


def _check_geometry(world: np.ndarray, rays: np.ndarray) -> None:
    e1 = world[1] - world[0]
    e2 = world[2] - world[0]
    scale = np.linalg.norm(e1) * np.linalg.norm(e2)
    if scale == 0.0 or np.linalg.norm(np.cross(e1, e2)) <= COLLINEAR_TOL * scale:
        raise DegenerateConfiguration("Reference points are collinear")
    for i, j in ((0, 1), (0, 2), (1, 2)):
        if rays[i] @ rays[j] > 1.0 - COINCIDENT_RAY_TOL:
            raise DegenerateConfiguration(f"Bearing rays {i} and {j} coincide")


def _p3p_candidates(world: np.ndarray, rays: np.ndarray) -> List[Tuple[np.ndarray, np.ndarray]]:
    """
    Grunert's distance-ratio solution.

    With s2 = u·s1 and s3 = v·s1 the three law-of-cosines constraints reduce to
    a quartic in v; u follows linearly and s1 from the b-side constraint.
    """
    a = np.linalg.norm(world[1] - world[2])
    b = np.linalg.norm(world[0] - world[2])
    c = np.linalg.norm(world[0] - world[1])
    cos_alpha = rays[1] @ rays[2]
    cos_beta = rays[0] @ rays[2]
    cos_gamma = rays[0] @ rays[1]

    k = (a * a - c * c) / (b * b)
    ratio = (c * c) / (b * b)
    numerator = np.poly1d([k - 1.0, -2.0 * k * cos_beta, 1.0 + k])
    denominator = np.poly1d([-2.0 * cos_alpha, 2.0 * cos_gamma])
    q = np.poly1d([1.0, -2.0 * cos_beta, 1.0])
    quartic = denominator * denominator * (1.0 - ratio * q) + numerator * numerator - 2.0 * cos_gamma * numerator * denominator

    scale = max(a, b, c)
    candidates = []
    seen: List[float] = []
    for root in np.roots(quartic.coeffs):
        if abs(root.imag) > 1e-6 * (1.0 + abs(root.real)):
            continue
        v = _polish(quartic, float(root.real))
        if any(abs(v - other) < 1e-9 for other in seen):
            continue
        seen.append(v)
        d = denominator(v)
        qv = q(v)
        if abs(d) < 1e-12 or qv <= 0.0 or v <= 0.0:
            continue
        u = numerator(v) / d
        if u <= 0.0:
            continue
        s1 = b / math.sqrt(qv)
        camera = np.array([s1, u * s1, v * s1])[:, None] * rays
        rotation, translation = _rigid_fit(world, camera)
        residual = np.max(np.linalg.norm(world @ rotation.T + translation - camera, axis=1))
        if residual > 1e-6 * scale:
            continue
        candidates.append((rotation, translation))
    return candidates


def solve_p3p(
    points: Sequence[ReferencePoint],
    validation: ReferencePoint,
    K: CameraIntrinsics,
) -> List[WorldCameraTransform]:
    """
    All real P3P poses for three correspondences, best validation fit first

    Args:
        points: Three solving correspondences
        validation: Fourth correspondence used to rank the candidates
        K: Camera intrinsics

    Returns:
        Up to four world->camera transforms sorted by the validation point's
        reprojection error (candidates placing it behind the camera rank last)

    Raises:
        DegenerateConfiguration: collinear world points or coincident rays
        NoRealSolution: the quartic has no physically valid root
    """
    if len(points) != 3:
        raise ValueError("solve_p3p needs exactly three solving points")
    world = np.array([p.world for p in points])
    rays = np.array([bearing(K, p.pixel) for p in points])
    _check_geometry(world, rays)

    ranked = []
    for rotation, translation in _p3p_candidates(world, rays):
        try:
            T = WorldCameraTransform(rotation=rotation, translation=translation)
        except ValueError:
            continue
        try:
            score = float(np.linalg.norm(project(K, T, validation.world) - validation.pixel))
        except PointBehindCamera:
            score = math.inf
        ranked.append((score, T))

    if not ranked:
        raise NoRealSolution("P3P quartic has no valid real root")
    ranked.sort(key=lambda item: item[0])
    return [T for _, T in ranked]


# ==================== Scene Calibration ====================

def calibrate_scene(
    refs: Sequence[ReferencePoint],
    K: CameraIntrinsics,
    surveyed_rsu: Optional[np.ndarray] = None,
) -> CalibrationResult:
    """
    Exhaustive 4-subset P3P calibration

    Each subset is solved once per choice of validation point, so the candidate
    set does not depend on input order. Ties keep the first candidate in
    lexicographic subset order.

    Raises:
        AllSubsetsDegenerate: no subset produced a pose with every reference in front
    """
    refs = list(refs)
    if len(refs) < 4:
        raise DataError(f"Calibration needs at least 4 reference points, got {len(refs)}")

    best: Optional[Tuple[float, float, WorldCameraTransform, List[int]]] = None
    examined = 0
    for subset in itertools.combinations(range(len(refs)), 4):
        for held in range(4):
            solving = [subset[i] for i in range(4) if i != held]
            try:
                candidates = solve_p3p([refs[i] for i in solving], refs[subset[held]], K)
            except (DegenerateConfiguration, NoRealSolution):
                continue
            for T in candidates:
                try:
                    avg, std = reprojection_error(T, K, refs)
                except PointBehindCamera:
                    continue
                examined += 1
                if best is None or avg < best[0]:
                    best = (avg, std, T, solving + [subset[held]])

    if best is None:
        raise AllSubsetsDegenerate(f"None of the 4-subsets of {len(refs)} reference points produced a usable pose")

    avg, std, T, subset = best
    rsu_error = None
    if surveyed_rsu is not None:
        rsu_error = float(np.linalg.norm(camera_origin_world(T) - np.asarray(surveyed_rsu, dtype=np.float64)))

    logger.info("Calibration selected",
                subset=subset,
                candidates=examined,
                reprojection_avg=avg,
                reprojection_std=std,
                rsu_error=rsu_error)

    return CalibrationResult(
        transform=T,
        reprojection_avg=avg,
        reprojection_std=std,
        rsu_error=rsu_error,
        subset=subset,
        candidates=examined,
    )


# ==================== Perturbation ====================

def perturbation_draw(spec: PerturbationSpec, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """
    One perturbation sample

    Returns:
        (angles, t_p): angles = (θ_X, θ_Y, θ_Z) in degrees, t_p in meters
    """
    angles = rng.normal(0.0, spec.sigma_theta, 3)
    t_p = rng.normal(0.0, spec.sigma_t, 3)
    return angles, t_p


def perturb_transform(T_wc: WorldCameraTransform, spec: PerturbationSpec) -> WorldCameraTransform:
    """
    Perturb a camera->world transform: R' = R_Z·R_Y·R_X·R, t' = t + t_p

    Deterministic given spec.seed. Zero sigmas return the input unchanged.
    """
    if spec.sigma_theta == 0.0 and spec.sigma_t == 0.0:
        return T_wc.model_copy(deep=True)

    angles, t_p = perturbation_draw(spec, derive_rng(spec.seed, "perturbation"))
    rotation = T_wc.rotation
    if spec.sigma_theta > 0.0:
        theta_x, theta_y, theta_z = angles
        r_p = Rotation.from_euler("ZYX", [theta_z, theta_y, theta_x], degrees=True).as_matrix()
        rotation, _ = polar(r_p @ rotation)

    logger.debug("Transform perturbed",
                 sigma_theta=spec.sigma_theta,
                 sigma_t=spec.sigma_t,
                 angles=angles.tolist(),
                 t_p=t_p.tolist())

    return WorldCameraTransform(rotation=rotation, translation=T_wc.translation + t_p)
