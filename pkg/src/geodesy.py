"""
Coordinate-system machinery

geodetic (lat/lon/alt) -> ECEF -> local ENU (world) -> camera frame -> pixels

Conventions:
- World frame: ENU tangent plane anchored at the scene origin (the RSU ground point)
- Camera frame: +z forward, +x right, +y down
- No lens distortion

All functions are pure and operate on float64 numpy arrays.
"""

import math

import numpy as np

from errors import PointBehindCamera
from models import CameraIntrinsics, GeodeticCoord, WorldCameraTransform


# ==================== WGS84 Constants ====================

WGS84_A = 6378137.0
WGS84_F = 1.0 / 298.257223563
WGS84_B = WGS84_A * (1.0 - WGS84_F)
WGS84_E2 = WGS84_F * (2.0 - WGS84_F)


# ==================== Geodetic / ECEF / ENU ====================

def wgs84_to_ecef(g: GeodeticCoord) -> np.ndarray:
    """Geodetic coordinate to Earth-centered Earth-fixed meters"""
    lat = math.radians(g.latitude)
    lon = math.radians(g.longitude)
    sin_lat = math.sin(lat)
    n = WGS84_A / math.sqrt(1.0 - WGS84_E2 * sin_lat * sin_lat)
    return np.array([
        (n + g.altitude) * math.cos(lat) * math.cos(lon),
        (n + g.altitude) * math.cos(lat) * math.sin(lon),
        (n * (1.0 - WGS84_E2) + g.altitude) * sin_lat,
    ])


def ecef_to_wgs84(p: np.ndarray, iterations: int = 10) -> GeodeticCoord:
    """Inverse of wgs84_to_ecef (fixed-point iteration on latitude)"""
    x, y, z = (float(c) for c in p)
    lon = math.atan2(y, x)
    rho = math.hypot(x, y)
    lat = math.atan2(z, rho * (1.0 - WGS84_E2))
    for _ in range(iterations):
        sin_lat = math.sin(lat)
        n = WGS84_A / math.sqrt(1.0 - WGS84_E2 * sin_lat * sin_lat)
        lat = math.atan2(z + WGS84_E2 * n * sin_lat, rho)
    sin_lat = math.sin(lat)
    # valid at the poles, where rho/cos(lat) is undefined
    alt = rho * math.cos(lat) + z * sin_lat - WGS84_A * math.sqrt(1.0 - WGS84_E2 * sin_lat * sin_lat)
    return GeodeticCoord(
        latitude=math.degrees(lat),
        longitude=math.degrees(lon),
        altitude=alt,
    )


def enu_rotation(origin: GeodeticCoord) -> np.ndarray:
    """Rows are the east, north and up unit vectors expressed in ECEF"""
    lat = math.radians(origin.latitude)
    lon = math.radians(origin.longitude)
    sl, cl = math.sin(lat), math.cos(lat)
    so, co = math.sin(lon), math.cos(lon)
    return np.array([
        [-so, co, 0.0],
        [-sl * co, -sl * so, cl],
        [cl * co, cl * so, sl],
    ])


def ecef_to_enu(p: np.ndarray, origin: GeodeticCoord) -> np.ndarray:
    return enu_rotation(origin) @ (np.asarray(p, dtype=np.float64) - wgs84_to_ecef(origin))


def enu_to_ecef(P: np.ndarray, origin: GeodeticCoord) -> np.ndarray:
    return enu_rotation(origin).T @ np.asarray(P, dtype=np.float64) + wgs84_to_ecef(origin)


def geodetic_to_enu(g: GeodeticCoord, origin: GeodeticCoord) -> np.ndarray:
    return ecef_to_enu(wgs84_to_ecef(g), origin)


def enu_to_geodetic(P: np.ndarray, origin: GeodeticCoord) -> GeodeticCoord:
    return ecef_to_wgs84(enu_to_ecef(P, origin))


# ==================== World / Camera ====================

def world_to_camera(T: WorldCameraTransform, P: np.ndarray) -> np.ndarray:
    """^C R_W · P + ^C t_W; P may be a single point or an (N, 3) array"""
    P = np.asarray(P, dtype=np.float64)
    return P @ T.rotation.T + T.translation


def invert_transform(T: WorldCameraTransform) -> WorldCameraTransform:
    """[R | t] -> [Rᵀ | −Rᵀ·t]"""
    rotation_t = T.rotation.T
    return WorldCameraTransform(rotation=rotation_t, translation=-rotation_t @ T.translation)


def camera_to_world(T: WorldCameraTransform, X: np.ndarray) -> np.ndarray:
    """Inverse of world_to_camera for the same world->camera transform T"""
    X = np.asarray(X, dtype=np.float64)
    return (X - T.translation) @ T.rotation


def camera_origin_world(T: WorldCameraTransform) -> np.ndarray:
    """Camera center in world coordinates: last column of ^W T_C"""
    return invert_transform(T).translation


def camera_pose_from_yaw_pitch(yaw_deg: float, pitch_deg: float, height: float) -> WorldCameraTransform:
    """
    World->camera transform for a camera mounted at (0, 0, height).

    Args:
        yaw_deg: Azimuth of the optical axis, clockwise from north
        pitch_deg: Downward tilt of the optical axis
        height: Mounting height above the ENU origin (meters)
    """
    yaw = math.radians(yaw_deg)
    pitch = math.radians(pitch_deg)
    forward = np.array([
        math.sin(yaw) * math.cos(pitch),
        math.cos(yaw) * math.cos(pitch),
        -math.sin(pitch),
    ])
    right = np.array([math.cos(yaw), -math.sin(yaw), 0.0])
    down = np.cross(forward, right)
    rotation = np.vstack([right, down, forward])
    center = np.array([0.0, 0.0, height])
    return WorldCameraTransform(rotation=rotation, translation=-rotation @ center)


# ==================== Projection ====================

def project(K: CameraIntrinsics, T: WorldCameraTransform, P: np.ndarray) -> np.ndarray:
    """
    Pinhole projection of a world point to pixels

    Raises:
        PointBehindCamera: camera-frame depth z <= 0
    """
    return project_camera(K, world_to_camera(T, P))


def project_camera(K: CameraIntrinsics, X: np.ndarray) -> np.ndarray:
    """Pinhole projection of a camera-frame point"""
    x, y, z = (float(c) for c in X)
    if z <= 0.0:
        raise PointBehindCamera(f"Point has camera depth {z:.6g} <= 0")
    return np.array([K.fx * x / z + K.cx, K.fy * y / z + K.cy])


def unproject(K: CameraIntrinsics, pixel: np.ndarray, depth: float) -> np.ndarray:
    """Camera-frame point at the given z-depth along the pixel's ray"""
    u, v = (float(c) for c in pixel)
    return np.array([
        (u - K.cx) / K.fx * depth,
        (v - K.cy) / K.fy * depth,
        depth,
    ])


def bearing(K: CameraIntrinsics, pixel: np.ndarray) -> np.ndarray:
    """Unit ray through a pixel in the camera frame"""
    ray = unproject(K, pixel, 1.0)
    return ray / np.linalg.norm(ray)
