"""
Correspondence windows: the network's input/output contract

A window covers 3 s on a uniform 10-step grid (steps at t_start + 0.3·(k+1)):
- vision: [depth, u, v, X, Y, Z] per step
- phone:  [ftm_range, ftm_std, acc(3), gyr(3), mag(3), gps(3)] per step,
          GPS already in the camera frame
- rssi:   one dBm value per step, carried alongside for ablations
- c_gnd:  camera-frame XYZ of the final step

Windows missing a camera step become phone-only records.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError

from errors import MalformedRecord
from logger import get_logger
from models import CorrespondenceRecord, FeatureMask, GeodeticCoord, WorldCameraTransform
from src.geodesy import geodetic_to_enu, world_to_camera
from src.seeding import derive_rng
from src.sim import PedestrianStreams

logger = get_logger(__name__)

WINDOW_SECONDS = 3.0
WINDOW_STEPS = 10
STEP_SECONDS = WINDOW_SECONDS / WINDOW_STEPS
MAX_GAP = 0.5
GPS_MAX_AGE = 1.5
DEFAULT_HOP = 1.0 / 3.0

VISION_WIDTH = 6
PHONE_WIDTH = 14

# Phone channel slices inside the 14-wide window
FTM_SLICE = slice(0, 2)
IMU_SLICE = slice(2, 11)
GPS_SLICE = slice(11, 14)


# ==================== Data Types ====================

@dataclass
class Correspondence:
    """One synchronized window; vision and c_gnd are None for phone-only windows"""
    scene: str
    seq: int
    ped: str
    t0: float
    phone: np.ndarray
    rssi: np.ndarray
    vision: Optional[np.ndarray] = None
    c_gnd: Optional[np.ndarray] = None
    minted: bool = False
    matched: Optional[str] = None
    pf: Optional[np.ndarray] = None

    @property
    def labeled(self) -> bool:
        return self.vision is not None

    @property
    def key(self) -> Tuple[str, int, str, float]:
        return (self.scene, self.seq, self.ped, self.t0)

    def to_record(self) -> CorrespondenceRecord:
        return CorrespondenceRecord(
            scene=self.scene,
            seq=self.seq,
            ped=self.ped,
            t0=self.t0,
            v=None if self.vision is None else self.vision.tolist(),
            p=self.phone.tolist(),
            rssi=self.rssi.tolist(),
            c_gnd=None if self.c_gnd is None else self.c_gnd.tolist(),
            minted=self.minted,
            matched=self.matched,
            pf=None if self.pf is None else self.pf.tolist(),
        )

    @classmethod
    def from_record(cls, record: CorrespondenceRecord) -> "Correspondence":
        def array(value):
            return None if value is None else np.array(value, dtype=np.float64)

        return cls(
            scene=record.scene,
            seq=record.seq,
            ped=record.ped,
            t0=record.t0,
            phone=np.array(record.p, dtype=np.float64),
            rssi=np.array(record.rssi, dtype=np.float64),
            vision=array(record.v),
            c_gnd=array(record.c_gnd),
            minted=record.minted,
            matched=record.matched,
            pf=array(record.pf),
        )


@dataclass
class WindowingResult:
    labeled: List[Correspondence] = field(default_factory=list)
    phone_only: List[Correspondence] = field(default_factory=list)
    skipped: int = 0


# ==================== Resampling ====================

def step_times(t_start: float) -> np.ndarray:
    return t_start + STEP_SECONDS * np.arange(1, WINDOW_STEPS + 1)


def window_starts(end_time: float, hop: float) -> np.ndarray:
    """t_start = i·hop for every window ending at or before end_time"""
    n = int(math.floor((end_time - WINDOW_SECONDS) / hop + 1e-9)) + 1
    return np.arange(max(n, 0)) * hop


def nearest_indices(times: np.ndarray, queries: np.ndarray, max_gap: float = MAX_GAP) -> np.ndarray:
    """Index of the nearest sample per query, −1 where the gap exceeds max_gap"""
    if len(times) == 0:
        return np.full(queries.shape, -1, dtype=np.int64)
    right = np.clip(np.searchsorted(times, queries), 0, len(times) - 1)
    left = np.clip(right - 1, 0, len(times) - 1)
    pick_left = np.abs(queries - times[left]) <= np.abs(times[right] - queries)
    idx = np.where(pick_left, left, right)
    return np.where(np.abs(times[idx] - queries) <= max_gap, idx, -1)


def hold_indices(times: np.ndarray, queries: np.ndarray, max_age: float = GPS_MAX_AGE) -> np.ndarray:
    """Index of the latest sample at or before each query (zero-order hold), −1 if none"""
    idx = np.searchsorted(times, queries, side="right") - 1
    valid = idx >= 0
    safe = np.where(valid, idx, 0)
    fresh = valid & (queries - times[safe] <= max_age) if len(times) else valid
    return np.where(fresh, idx, -1)


def interval_means(times: np.ndarray, values: np.ndarray, queries: np.ndarray, width: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Mean of samples in (q − width, q] per query

    Returns:
        (means, counts); rows with count 0 are zero
    """
    csum = np.vstack([np.zeros((1, values.shape[1])), np.cumsum(values, axis=0)])
    hi = np.searchsorted(times, queries, side="right")
    lo = np.searchsorted(times, queries - width, side="right")
    counts = hi - lo
    sums = csum[hi] - csum[lo]
    means = sums / np.maximum(counts, 1)[..., None]
    return means, counts


def gps_to_camera(gps: np.ndarray, origin: GeodeticCoord, transform: WorldCameraTransform) -> np.ndarray:
    """(N, 4) [t, lat, lon, alt] fixes -> (N, 3) camera-frame points"""
    if len(gps) == 0:
        return np.zeros((0, 3))
    world = np.array([
        geodetic_to_enu(GeodeticCoord(latitude=lat, longitude=lon, altitude=alt), origin)
        for _, lat, lon, alt in gps
    ])
    return world_to_camera(transform, world)


# ==================== Windowing ====================

def window_streams(
    streams: PedestrianStreams,
    gps_transform: WorldCameraTransform,
    origin: GeodeticCoord,
    hop: float = DEFAULT_HOP,
    scene: str = "",
    seq: int = 0,
    end_time: Optional[float] = None,
) -> WindowingResult:
    """
    Slice one pedestrian's streams into 3 s correspondence windows

    Args:
        streams: Raw sensor streams of the pedestrian
        gps_transform: World->camera transform used to bring GPS into the camera
                       frame (the calibrated, possibly perturbed, estimate)
        origin: Scene ENU origin
        hop: Window hop in seconds
        end_time: Last usable time; defaults to the end of the truth stream

    Returns:
        WindowingResult with labeled windows, phone-only windows and the count
        of windows skipped for missing phone data
    """
    if end_time is None:
        end_time = float(streams.truth[-1, 0]) if len(streams.truth) else 0.0

    starts = window_starts(end_time, hop)
    result = WindowingResult()
    if len(starts) == 0:
        return result

    queries = starts[:, None] + STEP_SECONDS * np.arange(1, WINDOW_STEPS + 1)[None, :]

    cam_idx = nearest_indices(streams.camera[:, 0], queries)
    ftm_idx = nearest_indices(streams.ftm[:, 0], queries)
    rssi_idx = nearest_indices(streams.rssi[:, 0], queries)
    gps_idx = hold_indices(streams.gps[:, 0], queries)

    imu_times = streams.imu[:, 0]
    imu_means, imu_counts = interval_means(imu_times, streams.imu[:, 1:], queries, STEP_SECONDS)
    imu_near = nearest_indices(imu_times, queries)
    imu_ok = (imu_counts > 0) | (imu_near >= 0)
    if len(imu_times):
        imu_values = np.where((imu_counts > 0)[..., None], imu_means, streams.imu[np.maximum(imu_near, 0), 1:])
    else:
        imu_values = imu_means

    gps_cam = gps_to_camera(streams.gps, origin, gps_transform)

    phone_ok = (ftm_idx >= 0).all(axis=1) & (rssi_idx >= 0).all(axis=1) & (gps_idx >= 0).all(axis=1) & imu_ok.all(axis=1)
    camera_ok = (cam_idx >= 0).all(axis=1)

    for w, t0 in enumerate(starts):
        if not phone_ok[w]:
            result.skipped += 1
            continue
        phone = np.hstack([
            streams.ftm[ftm_idx[w], 1:3],
            imu_values[w],
            gps_cam[gps_idx[w]],
        ])
        rssi = streams.rssi[rssi_idx[w], 1].copy()
        record = Correspondence(scene=scene, seq=seq, ped=streams.ped_id, t0=float(t0), phone=phone, rssi=rssi)
        if camera_ok[w]:
            cam = streams.camera[cam_idx[w]]
            record.vision = np.column_stack([cam[:, 3], cam[:, 1], cam[:, 2], cam[:, 4:7]])
            record.c_gnd = cam[-1, 4:7].copy()
            result.labeled.append(record)
        else:
            result.phone_only.append(record)

    logger.debug("Windowed pedestrian",
                 scene=scene,
                 seq=seq,
                 ped=streams.ped_id,
                 labeled=len(result.labeled),
                 phone_only=len(result.phone_only),
                 skipped=result.skipped)
    return result


def canonical_order(records: Iterable[Correspondence]) -> List[Correspondence]:
    return sorted(records, key=lambda r: (r.scene, r.seq, r.ped, r.t0))


# ==================== Splits ====================

def held_out_sequences(keys: Iterable[Tuple[str, int]], seed: int) -> Dict[str, int]:
    """Pick one sequence per scenario for testing, deterministically"""
    by_scene: Dict[str, List[int]] = {}
    for scene, seq in keys:
        by_scene.setdefault(scene, [])
        if seq not in by_scene[scene]:
            by_scene[scene].append(seq)

    chosen = {}
    for scene in sorted(by_scene):
        sequences = sorted(by_scene[scene])
        if len(sequences) == 1:
            logger.warning("Scenario has a single sequence; it is held out entirely", scene=scene)
        rng = derive_rng(seed, "split", scene)
        chosen[scene] = sequences[int(rng.integers(len(sequences)))]
    return chosen


def split_dataset(records: Sequence[Correspondence], seed: int) -> Tuple[List[Correspondence], List[Correspondence]]:
    """
    Hold out one randomly chosen sequence from each scenario

    Returns:
        (train, test) in canonical order
    """
    held = held_out_sequences(((r.scene, r.seq) for r in records), seed)
    train, test = [], []
    for record in canonical_order(records):
        (test if held.get(record.scene) == record.seq else train).append(record)
    return train, test


def split_by_pedestrian(records: Sequence[Correspondence], labeled_ped: str) -> Tuple[List[Correspondence], List[Correspondence]]:
    """Self-training split: one pedestrian's windows form the labeled set"""
    labeled = [r for r in records if r.ped == labeled_ped]
    others = [r for r in records if r.ped != labeled_ped]
    return labeled, others


# ==================== Feature Masks ====================

def extended_phone(phone: np.ndarray, rssi: np.ndarray) -> np.ndarray:
    """[..., 10, 15] channels ordered [ftm(2), rssi, imu(9), gps(3)]"""
    return np.concatenate([phone[..., FTM_SLICE], rssi[..., None], phone[..., IMU_SLICE], phone[..., GPS_SLICE]], axis=-1)


def mask_columns(mask: FeatureMask) -> List[int]:
    """Column indices into the extended phone layout"""
    columns = []
    if mask.ftm:
        columns += [0, 1]
    if mask.rssi:
        columns += [2]
    if mask.imu:
        columns += list(range(3, 12))
    if mask.gps:
        columns += [12, 13, 14]
    return columns


def apply_mask(phone: np.ndarray, rssi: np.ndarray, mask: FeatureMask) -> np.ndarray:
    """
    Select the phone channels a mask enables

    Works on a single (10, 14) window or a batch (B, 10, 14); the default
    FTM+IMU+GPS mask returns the phone window unchanged.
    """
    return extended_phone(phone, rssi)[..., mask_columns(mask)]


def stack_batch(records: Sequence[Correspondence], mask: FeatureMask) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Returns:
        (V, P, C): (B, 10, 6) vision, (B, 10, w) masked phone, (B, 3) targets
    """
    V = np.stack([r.vision for r in records])
    P = stack_phone(records, mask)
    C = np.stack([r.c_gnd for r in records])
    return V, P, C


def stack_phone(records: Sequence[Correspondence], mask: FeatureMask) -> np.ndarray:
    """(B, 10, w) masked phone windows; works for phone-only records too"""
    return apply_mask(np.stack([r.phone for r in records]), np.stack([r.rssi for r in records]), mask)


# ==================== Persistence ====================

def write_jsonl(records: Iterable[Correspondence], path: Path) -> int:
    """Write one JSON object per line; floats keep full round-trip precision"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record.to_record().model_dump()) + "\n")
            count += 1
    logger.info("Dataset written", path=str(path), records=count)
    return count


def read_jsonl(path: Path) -> List[Correspondence]:
    """
    Raises:
        MalformedRecord: a line is not valid JSON or violates the record schema
    """
    path = Path(path)
    records = []
    with path.open("r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = CorrespondenceRecord.model_validate(json.loads(line))
            except (json.JSONDecodeError, ValidationError) as e:
                raise MalformedRecord(line_no, str(e).splitlines()[0], str(path)) from e
            records.append(Correspondence.from_record(record))
    return records
