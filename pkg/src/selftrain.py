"""
Self-learning: associate, expand, fine-tune

Per iteration:
1. The current model localizes every unlabeled phone window
2. Each phone estimate is matched to the nearest camera detection of the
   same (scene, sequence, window start)
3. Each match mints a correspondence (matched camera window + phone window)
4. Labeled + minted data fine-tunes a copy of the model at the low lr

Matches are per window and not exclusive: two phones may claim one detection.
"""

import copy
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from errors import EmptyInput, NoCameraDetections
from logger import get_logger
from models import AssociationResult, SelfTrainConfig, SelfTrainReport
from src.dataset import Correspondence, canonical_order
from src.gan import GanModel, predict, train

logger = get_logger(__name__)

GroupKey = Tuple[str, int, float]


# ==================== Association ====================

def associate(
    phone_coords: np.ndarray,
    camera_coords: np.ndarray,
    phone_ids: Optional[Sequence[str]] = None,
    camera_ids: Optional[Sequence[str]] = None,
) -> List[AssociationResult]:
    """
    Nearest camera detection for every phone estimate

    Ties go to the lowest camera index. When both id lists are given,
    is_correct records whether the matched ids agree.

    Raises:
        EmptyInput: no camera detections
    """
    phone_coords = np.atleast_2d(np.asarray(phone_coords, dtype=np.float64))
    camera_coords = np.atleast_2d(np.asarray(camera_coords, dtype=np.float64))
    if camera_coords.shape[0] == 0 or camera_coords.size == 0:
        raise EmptyInput("Association needs at least one camera detection")
    phone_ids = list(phone_ids) if phone_ids is not None else [str(i) for i in range(len(phone_coords))]
    known = camera_ids is not None
    camera_ids = list(camera_ids) if known else [str(j) for j in range(len(camera_coords))]

    distances = np.linalg.norm(phone_coords[:, None, :] - camera_coords[None, :, :], axis=2)
    best = np.argmin(distances, axis=1)
    results = []
    for i, j in enumerate(best):
        results.append(AssociationResult(
            phone_id=phone_ids[i],
            matched_camera_id=camera_ids[j],
            camera_index=int(j),
            distance=float(distances[i, j]),
            is_correct=(phone_ids[i] == camera_ids[j]) if known else None,
        ))
    return results


def association_precision(results: Sequence[AssociationResult]) -> float:
    """
    Fraction of correct matches

    Raises:
        EmptyInput: no results with known correctness
    """
    judged = [r for r in results if r.is_correct is not None]
    if not judged:
        raise EmptyInput("No associations with known ground truth")
    return sum(r.is_correct for r in judged) / len(judged)


# ==================== Dataset Expansion ====================

@dataclass
class Match:
    """One accepted association with the windows it pairs"""
    result: AssociationResult
    phone: Correspondence
    camera: Correspondence


def mint_correspondence(match: Match) -> Correspondence:
    return Correspondence(
        scene=match.phone.scene,
        seq=match.phone.seq,
        ped=match.phone.ped,
        t0=match.phone.t0,
        phone=match.phone.phone.copy(),
        rssi=match.phone.rssi.copy(),
        vision=match.camera.vision.copy(),
        c_gnd=match.camera.c_gnd.copy(),
        minted=True,
        matched=match.camera.ped,
    )


def expand_dataset(labeled: Sequence[Correspondence], matches: Sequence[Match]) -> List[Correspondence]:
    """Labeled records followed by one minted record per match; inputs are not modified"""
    return list(labeled) + [mint_correspondence(m) for m in matches]


def _group(records: Sequence[Correspondence]) -> Dict[GroupKey, List[Correspondence]]:
    groups: Dict[GroupKey, List[Correspondence]] = defaultdict(list)
    for record in records:
        groups[(record.scene, record.seq, round(record.t0, 6))].append(record)
    return groups


def associate_windows(
    model: GanModel,
    labeled: Sequence[Correspondence],
    unlabeled: Sequence[Correspondence],
    cfg: SelfTrainConfig,
) -> List[Match]:
    """
    Match unlabeled phone windows to the camera detections of their window

    Camera candidates are every vision window (labeled or unlabeled) sharing
    the phone window's (scene, sequence, start), ordered by pedestrian id.

    Raises:
        NoCameraDetections: no phone window has a camera candidate
    """
    phones = [r for r in canonical_order(unlabeled) if r.labeled or cfg.include_phone_only]
    if not phones:
        return []
    estimates = predict(model, phones)
    cameras = _group([r for r in list(labeled) + list(unlabeled) if r.labeled])

    phone_groups: Dict[GroupKey, List[int]] = defaultdict(list)
    for i, record in enumerate(phones):
        phone_groups[(record.scene, record.seq, round(record.t0, 6))].append(i)

    matches: List[Match] = []
    associated_any = False
    for key in sorted(phone_groups):
        candidates = sorted(cameras.get(key, []), key=lambda r: r.ped)
        if not candidates:
            continue
        associated_any = True
        index = phone_groups[key]
        results = associate(
            estimates[index],
            np.stack([c.c_gnd for c in candidates]),
            phone_ids=[phones[i].ped for i in index],
            camera_ids=[c.ped for c in candidates],
        )
        for i, result in zip(index, results):
            if result.distance <= cfg.max_distance:
                matches.append(Match(result=result, phone=phones[i], camera=candidates[result.camera_index]))

    if not associated_any:
        raise NoCameraDetections("No unlabeled window has a camera detection to associate with")
    return matches


# ==================== Self-training Loop ====================

def mean_error(model: GanModel, records: Sequence[Correspondence]) -> float:
    records = [r for r in records if r.labeled]
    if not records:
        raise EmptyInput("No labeled held-out records")
    estimates = predict(model, records)
    return float(np.mean(np.linalg.norm(estimates - np.stack([r.c_gnd for r in records]), axis=1)))


def selftrain_iteration(
    model: GanModel,
    labeled: Sequence[Correspondence],
    unlabeled: Sequence[Correspondence],
    held_out: Sequence[Correspondence],
    cfg: SelfTrainConfig,
    iteration: int = 1,
) -> Tuple[GanModel, SelfTrainReport]:
    """
    One associate-expand-finetune round

    The given model is never modified; fine-tuning runs on a copy. With no
    unlabeled windows the model is returned unchanged.

    Raises:
        NoCameraDetections: nothing could be associated
    """
    pre_error = mean_error(model, held_out)
    if not unlabeled:
        logger.warning("No unlabeled windows; model unchanged", iteration=iteration)
        return model, SelfTrainReport(iteration=iteration, precision=math.nan, minted_count=0,
                                      pre_error=pre_error, post_error=pre_error)

    matches = associate_windows(model, labeled, unlabeled, cfg)
    precision = association_precision([m.result for m in matches]) if matches else math.nan
    expanded = expand_dataset(labeled, matches)

    tuned = copy.deepcopy(model)
    train(tuned, expanded, epochs=cfg.finetune_epochs, lr=cfg.finetune_lr)
    post_error = mean_error(tuned, held_out)

    report = SelfTrainReport(
        iteration=iteration,
        precision=precision,
        minted_count=len(matches),
        pre_error=pre_error,
        post_error=post_error,
    )
    logger.info("Self-training iteration complete", **report.model_dump())
    return tuned, report


def run_selftraining(
    model: GanModel,
    labeled: Sequence[Correspondence],
    unlabeled: Sequence[Correspondence],
    held_out: Sequence[Correspondence],
    cfg: SelfTrainConfig,
) -> Tuple[GanModel, List[SelfTrainReport]]:
    """Repeat selftrain_iteration; every round re-associates with the latest model"""
    reports = []
    for iteration in range(1, cfg.iterations + 1):
        model, report = selftrain_iteration(model, labeled, unlabeled, held_out, cfg, iteration)
        reports.append(report)
    return model, reports
