"""
Shared fixtures for the viloc test suite

Puts the repository root on sys.path so the flat modules (config, logger,
models, storage) and the src package import the same way the CLI does.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from models import CameraIntrinsics, NoiseConfig, SceneConfig  # noqa: E402
from src.geodesy import camera_pose_from_yaw_pitch  # noqa: E402


@pytest.fixture
def intrinsics() -> CameraIntrinsics:
    return CameraIntrinsics()


@pytest.fixture
def rsu_transform():
    """RSU at 2.6 m looking north, tilted 15 degrees down"""
    return camera_pose_from_yaw_pitch(0.0, 15.0, 2.6)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def quiet_scene_config() -> SceneConfig:
    """Short single-pedestrian scene with every noise source off"""
    return SceneConfig(
        scene_id="quiet",
        duration=20.0,
        n_pedestrians=1,
        noise=NoiseConfig.zero(),
        seed=3,
    )


@pytest.fixture
def busy_scene_config() -> SceneConfig:
    """Three pedestrians with default noise"""
    return SceneConfig(scene_id="busy", duration=30.0, n_pedestrians=3, seed=5)
