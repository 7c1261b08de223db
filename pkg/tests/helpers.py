"""
Analytic trajectories and record builders shared by the tests
"""

import math
from typing import Dict, List, Optional

import numpy as np

from models import SceneConfig
from src.dataset import Correspondence, window_streams
from src.sim import Trajectory, generate_scene


class StationaryTrajectory(Trajectory):
    def __init__(self, point, heading=0.0):
        self.point = np.asarray(point, dtype=np.float64)
        self._heading = heading

    def position(self, t):
        return np.tile(self.point, (len(np.atleast_1d(t)), 1))

    def velocity(self, t):
        return np.zeros((len(np.atleast_1d(t)), 3))

    def acceleration(self, t):
        return np.zeros((len(np.atleast_1d(t)), 3))

    def heading(self, t):
        return np.full(len(np.atleast_1d(t)), self._heading)

    def yaw_rate(self, t):
        return np.zeros(len(np.atleast_1d(t)))


class CircleTrajectory(Trajectory):
    """Counter-clockwise circle of radius r at speed v around (cx, cy)"""

    def __init__(self, center, radius, speed, height=0.9, phase=0.0):
        self.center = np.asarray(center, dtype=np.float64)
        self.radius = radius
        self.omega = speed / radius
        self.height = height
        self.phase = phase

    def _angle(self, t):
        return self.omega * np.atleast_1d(t) + self.phase

    def position(self, t):
        a = self._angle(t)
        return np.column_stack([self.center[0] + self.radius * np.cos(a),
                                self.center[1] + self.radius * np.sin(a),
                                np.full(len(a), self.height)])

    def velocity(self, t):
        a = self._angle(t)
        s = self.radius * self.omega
        return np.column_stack([-s * np.sin(a), s * np.cos(a), np.zeros(len(a))])

    def acceleration(self, t):
        a = self._angle(t)
        c = self.radius * self.omega ** 2
        return np.column_stack([-c * np.cos(a), -c * np.sin(a), np.zeros(len(a))])

    def heading(self, t):
        return self._angle(t) + math.pi / 2

    def yaw_rate(self, t):
        return np.full(len(np.atleast_1d(t)), self.omega)


def random_record(rng, scene="s", seq=0, ped="p0", t0=0.0, labeled=True) -> Correspondence:
    return Correspondence(
        scene=scene,
        seq=seq,
        ped=ped,
        t0=t0,
        phone=rng.normal(size=(10, 14)),
        rssi=rng.normal(-60, 5, 10),
        vision=rng.normal(size=(10, 6)) if labeled else None,
        c_gnd=rng.normal(size=3) if labeled else None,
    )


def scene_windows(cfg: SceneConfig, trajectories: Optional[Dict[str, Trajectory]] = None,
                  phone_only: bool = False) -> List[Correspondence]:
    """Labeled windows of every pedestrian in a freshly simulated scene, using the true transform"""
    scene = generate_scene(cfg, trajectories=trajectories)
    records = []
    for streams in scene.pedestrians.values():
        result = window_streams(streams, scene.transform, scene.origin, scene=cfg.scene_id, seq=cfg.sequence)
        records.extend(result.labeled)
        if phone_only:
            records.extend(result.phone_only)
    return records
