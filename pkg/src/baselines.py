"""
Reference localization methods in the camera frame

- Phone GPS: the window's final GPS fix
- Phone GPS + FTM: a particle filter that corrects GPS fixes with the RSU's
  FTM ranges; FTM epochs between GPS fixes update the weights on their own
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from errors import EmptyInput
from logger import get_logger
from models import GeodeticCoord, ParticleFilterConfig, WorldCameraTransform
from src.dataset import GPS_SLICE, WINDOW_SECONDS, Correspondence, gps_to_camera
from src.seeding import derive_rng
from src.sim import PedestrianStreams, Scene

logger = get_logger(__name__)

# Reported FTM std is floored so exact ranges keep a finite likelihood
FTM_STD_FLOOR = 0.1
# exp() underflows below this log-likelihood
COLLAPSE_LOG_LIKELIHOOD = -700.0
TIME_TOLERANCE = 1e-9

GPS_EVENT = 0
FTM_EVENT = 1


# ==================== Phone GPS ====================

def gps_baseline(phone: np.ndarray) -> np.ndarray:
    """GPS channel at the final step of a (10, 14) window or (B, 10, 14) batch"""
    return phone[..., -1, GPS_SLICE].copy()


# ==================== Particle Filter ====================

@dataclass
class FilterTrack:
    """Per-event filter output, time-ordered"""
    times: np.ndarray
    estimates: np.ndarray
    ess: np.ndarray
    collapsed: np.ndarray
    kinds: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def __len__(self) -> int:
        return len(self.times)


def _events(gps_seq: np.ndarray, ftm_seq: np.ndarray) -> List[Tuple[float, int, int]]:
    """(time, kind, row) sorted by time; a GPS fix precedes an FTM epoch at the same time"""
    events = [(float(t), GPS_EVENT, k) for k, t in enumerate(gps_seq[:, 0])]
    events += [(float(t), FTM_EVENT, k) for k, t in enumerate(ftm_seq[:, 0])]
    return sorted(events)


def _systematic_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = len(weights)
    positions = (rng.random() + np.arange(n)) / n
    cumulative = np.cumsum(weights)
    cumulative[-1] = 1.0
    return np.searchsorted(cumulative, positions)


def _random_walk(n: int, dt: float, up: np.ndarray, cfg: ParticleFilterConfig, rng: np.random.Generator) -> np.ndarray:
    step = rng.normal(0.0, cfg.process_noise_std * np.sqrt(dt), (n, 3))
    vertical = step @ up
    return step - (1.0 - cfg.vertical_noise_scale) * vertical[:, None] * up[None, :]


def particle_filter(
    gps_seq: np.ndarray,
    ftm_seq: np.ndarray,
    rsu_cam: np.ndarray,
    cfg: ParticleFilterConfig,
    up: Optional[np.ndarray] = None,
    rng: Optional[np.random.Generator] = None,
) -> FilterTrack:
    """
    Fuse camera-frame GPS fixes with FTM ranges to the RSU

    Args:
        gps_seq: (N, 4) [t, X, Y, Z] camera-frame GPS fixes
        ftm_seq: (M, 3) [t, range, std] FTM measurements
        rsu_cam: RSU position in the camera frame
        cfg: Filter parameters
        up: Unit world-up direction in the camera frame; the random walk
            along it is scaled by cfg.vertical_noise_scale. Defaults to -y.
        rng: Generator; defaults to one derived from cfg.seed

    Returns:
        FilterTrack with one entry per processed event. FTM epochs before
        the first GPS fix are ignored. Steps whose weights all underflow are
        re-initialised around the latest GPS fix and flagged as collapsed.
    """
    if len(gps_seq) == 0:
        raise EmptyInput("Particle filter needs at least one GPS fix")
    rng = rng if rng is not None else derive_rng(cfg.seed, "particle_filter")
    up = np.array([0.0, -1.0, 0.0]) if up is None else np.asarray(up, dtype=np.float64) / np.linalg.norm(up)
    rsu_cam = np.asarray(rsu_cam, dtype=np.float64)
    n = cfg.n_particles

    times, estimates, ess_values, collapsed, kinds = [], [], [], [], []
    particles = None
    weights = None
    last_fix = None
    last_time = None

    for t, kind, row in _events(gps_seq, ftm_seq):
        if kind == GPS_EVENT:
            last_fix = gps_seq[row, 1:4]
        if particles is None:
            if kind != GPS_EVENT:
                continue
            particles = last_fix + rng.normal(0.0, cfg.gps_meas_std, (n, 3))
            weights = np.full(n, 1.0 / n)
            last_time = t

        particles = particles + _random_walk(n, max(t - last_time, 0.0), up, cfg, rng)
        last_time = t

        if kind == GPS_EVENT:
            log_likelihood = -0.5 * np.sum((particles - last_fix) ** 2, axis=1) / cfg.gps_meas_std ** 2
        else:
            r_ftm, std = ftm_seq[row, 1], max(ftm_seq[row, 2], FTM_STD_FLOOR)
            predicted = np.linalg.norm(particles - rsu_cam, axis=1)
            log_likelihood = -0.5 * ((r_ftm - predicted) / std) ** 2

        peak = log_likelihood.max()
        updated = weights * np.exp(log_likelihood - peak)
        total = updated.sum()
        step_collapsed = peak < COLLAPSE_LOG_LIKELIHOOD or not np.isfinite(total) or total <= 0.0
        if step_collapsed:
            logger.warning("Particle weights collapsed; reinitialising around GPS", time=t, kind=kind)
            particles = last_fix + rng.normal(0.0, cfg.gps_meas_std, (n, 3))
            weights = np.full(n, 1.0 / n)
        else:
            weights = updated / total

        estimate = weights @ particles
        ess = 1.0 / np.sum(weights ** 2)
        if ess < cfg.resample_threshold * n:
            particles = particles[_systematic_resample(weights, rng)]
            weights = np.full(n, 1.0 / n)

        times.append(t)
        estimates.append(estimate)
        ess_values.append(ess)
        collapsed.append(step_collapsed)
        kinds.append(kind)

    return FilterTrack(
        times=np.array(times),
        estimates=np.array(estimates).reshape(-1, 3),
        ess=np.array(ess_values),
        collapsed=np.array(collapsed, dtype=bool),
        kinds=np.array(kinds, dtype=int),
    )


def estimate_at(track: FilterTrack, t: float) -> np.ndarray:
    """Latest estimate at or before t (the first one if t precedes the track)"""
    if len(track) == 0:
        raise EmptyInput("Filter track is empty")
    k = int(np.searchsorted(track.times, t + TIME_TOLERANCE, side="right")) - 1
    return track.estimates[max(k, 0)].copy()


# ==================== Scene Helpers ====================

def pedestrian_filter_track(
    streams: PedestrianStreams,
    transform: WorldCameraTransform,
    origin: GeodeticCoord,
    cfg: ParticleFilterConfig,
    rng: Optional[np.random.Generator] = None,
) -> FilterTrack:
    """
    Run the filter over one pedestrian's full streams

    GPS goes into the camera frame through `transform` (the calibrated
    estimate); the RSU sits at the camera-frame origin.
    """
    gps_seq = np.column_stack([streams.gps[:, 0], gps_to_camera(streams.gps, origin, transform)])
    up = transform.rotation[:, 2]
    return particle_filter(gps_seq, streams.ftm, np.zeros(3), cfg, up=up, rng=rng)


def scene_filter_tracks(
    scene: Scene,
    transform: WorldCameraTransform,
    cfg: ParticleFilterConfig,
) -> Dict[Tuple[str, int, str], FilterTrack]:
    """One track per pedestrian, keyed (scene_id, sequence, ped_id)"""
    scene_id, seq = scene.config.scene_id, scene.config.sequence
    tracks = {}
    for ped_id, streams in scene.pedestrians.items():
        rng = derive_rng(cfg.seed, "particle_filter", scene_id, seq, ped_id)
        track = pedestrian_filter_track(streams, transform, scene.origin, cfg, rng=rng)
        tracks[(scene_id, seq, ped_id)] = track
        logger.debug("Filter track complete",
                     scene=scene_id,
                     seq=seq,
                     ped=ped_id,
                     events=len(track),
                     collapsed=int(track.collapsed.sum()))
    return tracks


def attach_filter_estimates(
    records: Sequence[Correspondence],
    tracks: Dict[Tuple[str, int, str], FilterTrack],
) -> int:
    """
    Set record.pf to the filter estimate at each window's end

    Returns:
        Number of records that received an estimate
    """
    attached = 0
    for record in records:
        track = tracks.get((record.scene, record.seq, record.ped))
        if track is None or len(track) == 0:
            continue
        record.pf = estimate_at(track, record.t0 + WINDOW_SECONDS)
        attached += 1
    return attached
