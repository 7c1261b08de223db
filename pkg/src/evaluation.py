"""
Localization metrics and experiment harnesses

- localization_stats: avg / population std / median / 95th percentile
- evaluate_methods: per-scene and pooled stats for Phone GPS, GPS + FTM
  particle filter and the GAN
- perturbation_sweep: retrain and evaluate under perturbed camera-world transforms
- ablation: retrain and evaluate per phone feature mask
- selftrain_table: self-learning report rows

Percentiles interpolate linearly between order statistics.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import RunConfig
from errors import EmptyInput
from logger import get_logger
from models import (
    ErrorStats,
    FeatureMask,
    PerturbationSpec,
    ResultTable,
    SelfTrainReport,
    WorldCameraTransform,
)
from src.baselines import attach_filter_estimates, gps_baseline, scene_filter_tracks
from src.calib import perturb_transform
from src.dataset import Correspondence, split_dataset, window_streams
from src.geodesy import invert_transform
from src.gan import GanModel, predict, train
from src.sim import Scene

logger = get_logger(__name__)

METHOD_GPS = "Phone GPS"
METHOD_PF = "Phone GPS + FTM"
METHOD_GAN = "GAN"
OVERALL = "Overall"

STATS_HEADER = ["avg", "std", "med", "p95", "n"]

# Phone feature sets compared by the ablation, best-known combination first
ABLATION_MASKS = (
    "FTM+IMU+GPS",
    "RSSI+IMU+GPS",
    "IMU+GPS",
    "GPS",
    "FTM+IMU",
    "FTM+GPS",
    "RSSI+IMU",
    "RSSI+GPS",
    "FTM",
    "IMU",
)

SceneKey = Tuple[str, int]


# ==================== Statistics ====================

def localization_stats(errors: Sequence[float]) -> ErrorStats:
    """
    Raises:
        EmptyInput: no errors given
    """
    values = np.asarray(errors, dtype=np.float64).reshape(-1)
    if values.size == 0:
        raise EmptyInput("Cannot summarize an empty error list")
    return ErrorStats(
        avg=float(values.mean()),
        std=float(values.std()),
        med=float(np.percentile(values, 50)),
        p95=float(np.percentile(values, 95)),
        n=int(values.size),
    )


def localization_errors(estimates: np.ndarray, records: Sequence[Correspondence]) -> np.ndarray:
    targets = np.stack([r.c_gnd for r in records])
    return np.linalg.norm(estimates - targets, axis=1)


def _stats_row(stats: ErrorStats) -> list:
    return [stats.avg, stats.std, stats.med, stats.p95, stats.n]


# ==================== Method Comparison ====================

def method_estimates(records: Sequence[Correspondence], model: Optional[GanModel]) -> Dict[str, np.ndarray]:
    """
    (N, 3) estimates per method

    The particle-filter method is present only when every record carries a
    filter estimate; the GAN method only when a model is given.
    """
    estimates = {METHOD_GPS: gps_baseline(np.stack([r.phone for r in records]))}
    if all(r.pf is not None for r in records):
        estimates[METHOD_PF] = np.stack([r.pf for r in records])
    else:
        logger.warning("Filter estimates missing; skipping method", method=METHOD_PF)
    if model is not None:
        estimates[METHOD_GAN] = predict(model, records)
    return estimates


def evaluate_methods(
    records: Sequence[Correspondence],
    model: Optional[GanModel] = None,
) -> Dict[Tuple[str, str], ErrorStats]:
    """
    Error statistics per (scene, method), scenes sorted, then the pooled Overall rows

    Raises:
        EmptyInput: no labeled records
    """
    records = [r for r in records if r.labeled]
    if not records:
        raise EmptyInput("No labeled records to evaluate")
    estimates = method_estimates(records, model)
    errors = {method: localization_errors(est, records) for method, est in estimates.items()}
    scenes = np.array([r.scene for r in records])

    results: Dict[Tuple[str, str], ErrorStats] = {}
    for scene in sorted(set(scenes)):
        selected = scenes == scene
        for method, values in errors.items():
            results[(scene, method)] = localization_stats(values[selected])
    for method, values in errors.items():
        results[(OVERALL, method)] = localization_stats(values)
        logger.info("Method evaluated", method=method, **results[(OVERALL, method)].model_dump())
    return results


def methods_table(results: Dict[Tuple[str, str], ErrorStats], title: str = "Localization error (m)") -> ResultTable:
    return ResultTable(
        title=title,
        header=["scene", "method"] + STATS_HEADER,
        rows=[[scene, method] + _stats_row(stats) for (scene, method), stats in results.items()],
    )


# ==================== Experiment Data ====================

@dataclass
class ExperimentData:
    """Windowed train/test split of a set of scenes"""
    train: List[Correspondence] = field(default_factory=list)
    test: List[Correspondence] = field(default_factory=list)
    phone_only: List[Correspondence] = field(default_factory=list)


def build_experiment_data(
    scenes: Sequence[Scene],
    transforms: Dict[SceneKey, WorldCameraTransform],
    cfg: RunConfig,
) -> ExperimentData:
    """
    Window every pedestrian of every scene, hold out one sequence per
    scenario and attach particle-filter estimates to the held-out windows

    Args:
        transforms: World->camera transform per (scene_id, sequence) used to
                    bring GPS into the camera frame
    """
    labeled: List[Correspondence] = []
    phone_only: List[Correspondence] = []
    by_key: Dict[SceneKey, Scene] = {}
    for scene in scenes:
        key = (scene.config.scene_id, scene.config.sequence)
        by_key[key] = scene
        for streams in scene.pedestrians.values():
            result = window_streams(streams, transforms[key], scene.origin, cfg.hop, scene=key[0], seq=key[1])
            labeled.extend(result.labeled)
            phone_only.extend(result.phone_only)

    train_records, test_records = split_dataset(labeled, cfg.seed)
    held_out = sorted({(r.scene, r.seq) for r in test_records})
    tracks = {}
    for key in held_out:
        tracks.update(scene_filter_tracks(by_key[key], transforms[key], cfg.pf))
    attach_filter_estimates(test_records, tracks)

    train_keys = {(r.scene, r.seq) for r in train_records}
    data = ExperimentData(
        train=train_records,
        test=test_records,
        phone_only=[r for r in phone_only if (r.scene, r.seq) in train_keys],
    )
    logger.info("Experiment data built",
                scenes=len(scenes),
                train=len(data.train),
                test=len(data.test),
                phone_only=len(data.phone_only))
    return data


def train_and_evaluate(data: ExperimentData, cfg: RunConfig, mask: Optional[FeatureMask] = None) -> Dict[Tuple[str, str], ErrorStats]:
    model = GanModel(mask or cfg.mask, cfg.train)
    train(model, data.train)
    return evaluate_methods(data.test, model)


# ==================== Harnesses ====================

def perturb_world_camera(T: WorldCameraTransform, spec: PerturbationSpec) -> WorldCameraTransform:
    """Perturb a world->camera transform through its camera->world form"""
    if spec.sigma_theta == 0.0 and spec.sigma_t == 0.0:
        return T.model_copy(deep=True)
    return invert_transform(perturb_transform(invert_transform(T), spec))


def perturbation_sweep(
    levels: Sequence[Tuple[float, float]],
    scenes: Sequence[Scene],
    transforms: Dict[SceneKey, WorldCameraTransform],
    cfg: RunConfig,
) -> ResultTable:
    """
    Retrain from scratch at each (sigma_theta degrees, sigma_t meters) level

    The same seeded perturbation draw applies to the camera->world form of
    every scene's calibrated transform; GPS channels and filter estimates are
    rebuilt from the perturbed estimate.
    """
    rows = []
    for sigma_theta, sigma_t in levels:
        spec = PerturbationSpec(sigma_theta=sigma_theta, sigma_t=sigma_t, seed=cfg.perturbation.seed)
        perturbed = {key: perturb_world_camera(T, spec) for key, T in transforms.items()}
        results = train_and_evaluate(build_experiment_data(scenes, perturbed, cfg), cfg)
        for (scene, method), stats in results.items():
            if scene == OVERALL:
                rows.append([sigma_theta, sigma_t, method] + _stats_row(stats))
        logger.info("Perturbation level complete",
                    sigma_theta=sigma_theta,
                    sigma_t=sigma_t,
                    gan_avg=results[(OVERALL, METHOD_GAN)].avg)
    return ResultTable(
        title="Localization error (m) under camera-world perturbation",
        header=["sigma_theta_deg", "sigma_t_m", "method"] + STATS_HEADER,
        rows=rows,
    )


def ablation(masks: Sequence[FeatureMask], data: ExperimentData, cfg: RunConfig) -> ResultTable:
    """GAN error statistics after retraining with each phone feature mask"""
    rows = []
    for mask in masks:
        results = train_and_evaluate(data, cfg, mask)
        stats = results[(OVERALL, METHOD_GAN)]
        rows.append([mask.label] + _stats_row(stats))
        logger.info("Ablation cell complete", mask=mask.label, avg=stats.avg)
    return ResultTable(title="GAN localization error (m) per phone feature set", header=["features"] + STATS_HEADER, rows=rows)


def selftrain_table(reports: Sequence[SelfTrainReport]) -> ResultTable:
    return ResultTable(
        title="Self-learning",
        header=["iteration", "precision", "minted_count", "pre_error", "post_error"],
        rows=[[r.iteration, r.precision, r.minted_count, r.pre_error, r.post_error] for r in reports],
    )
