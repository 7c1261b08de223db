"""
Filesystem persistence for scenes, calibrations, checkpoints and result tables

Layout of a run directory:
    <scene_dir>/scene.json                       config, true transform, references, RSU
    <scene_dir>/streams/<ped_id>/<modality>.jsonl one JSON object per sample
    calibration/<scene_dir>.json                 CalibrationResult
    <name>.csv / <name>.md                       result tables
    config.env                                   resolved config snapshot

Every writer produces byte-stable output for identical inputs.
"""

import csv
import io
import json
from pathlib import Path
from typing import Any, Dict, Iterator, List, Sequence, Tuple

import numpy as np
from pydantic import ValidationError

from errors import CheckpointError, DataError, MalformedRecord
from logger import get_logger
from models import (
    CalibrationResult,
    GeodeticCoord,
    LossReport,
    ReferencePointRecord,
    ResultTable,
    SceneConfig,
    WorldCameraTransform,
)
from src.calib import reference_points_to_world
from src.geodesy import enu_to_geodetic, geodetic_to_enu
from src.sim import STREAM_FIELDS, PedestrianStreams, Scene

# Initialize logger
logger = get_logger(__name__)

SCENE_FILE = "scene.json"
STREAMS_DIR = "streams"


# ==================== JSON Helpers ====================

def write_json(path: Path, data: Dict[str, Any]) -> Path:
    """Write JSON with a trailing newline; floats use round-trip repr"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(data, f, indent=2)
        f.write("\n")
    return path


def read_json(path: Path) -> Dict[str, Any]:
    """
    Raises:
        DataError: file missing or not valid JSON
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"File not found: {path}")
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise DataError(f"Invalid JSON in {path}: {e}") from e


def write_jsonl_rows(path: Path, rows: Sequence[Dict[str, Any]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        for row in rows:
            f.write(json.dumps(row) + "\n")


def read_jsonl_rows(path: Path) -> Iterator[Tuple[int, Dict[str, Any]]]:
    """
    Yields:
        (line_number, object) for every non-blank line

    Raises:
        MalformedRecord: a line is not a JSON object
    """
    with open(path, 'r', encoding='utf-8') as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as e:
                raise MalformedRecord(line_no, str(e), str(path)) from e
            if not isinstance(row, dict):
                raise MalformedRecord(line_no, "expected a JSON object", str(path))
            yield line_no, row


# ==================== Scenes ====================

def _stream_rows(modality: str, array: np.ndarray) -> List[Dict[str, float]]:
    names = STREAM_FIELDS[modality]
    return [dict(zip(names, row)) for row in array.tolist()]


def _stream_array(modality: str, path: Path) -> np.ndarray:
    names = STREAM_FIELDS[modality]
    rows = []
    for line_no, row in read_jsonl_rows(path):
        try:
            rows.append([float(row[name]) for name in names])
        except (KeyError, TypeError, ValueError) as e:
            raise MalformedRecord(line_no, f"missing or invalid field: {e}", str(path)) from e
    return np.array(rows, dtype=np.float64).reshape(-1, len(names))


def save_scene(scene: Scene, scene_dir: Path) -> Path:
    """Serialize a scene: scene.json plus one JSONL file per stream"""
    scene_dir = Path(scene_dir)
    origin = scene.origin

    references = []
    for ref in scene.reference_points:
        g = enu_to_geodetic(ref.world, origin)
        references.append(ReferencePointRecord(
            lat=g.latitude, lon=g.longitude, alt=g.altitude,
            u=float(ref.pixel[0]), v=float(ref.pixel[1]),
        ).model_dump())

    write_json(scene_dir / SCENE_FILE, {
        "config": scene.config.model_dump(mode="json"),
        "transform": scene.transform.model_dump(mode="json"),
        "reference_points": references,
        "surveyed_rsu": enu_to_geodetic(scene.surveyed_rsu, origin).model_dump(),
        "pedestrians": list(scene.pedestrians),
    })

    for ped_id, streams in scene.pedestrians.items():
        for modality in STREAM_FIELDS:
            write_jsonl_rows(
                scene_dir / STREAMS_DIR / ped_id / f"{modality}.jsonl",
                _stream_rows(modality, streams.stream(modality)),
            )

    logger.info("Scene saved",
                scene_id=scene.config.scene_id,
                sequence=scene.config.sequence,
                path=str(scene_dir))
    return scene_dir


def load_scene(scene_dir: Path) -> Scene:
    """
    Raises:
        DataError: scene.json missing or invalid
        MalformedRecord: a stream line cannot be parsed
    """
    scene_dir = Path(scene_dir)
    data = read_json(scene_dir / SCENE_FILE)
    try:
        config = SceneConfig.model_validate(data["config"])
        transform = WorldCameraTransform.model_validate(data["transform"])
        records = [ReferencePointRecord.model_validate(r) for r in data["reference_points"]]
        surveyed = GeodeticCoord.model_validate(data["surveyed_rsu"])
        ped_ids = list(data["pedestrians"])
    except (KeyError, ValidationError) as e:
        raise DataError(f"Invalid scene file {scene_dir / SCENE_FILE}: {e}") from e

    pedestrians = {}
    for ped_id in ped_ids:
        arrays = {
            modality: _stream_array(modality, scene_dir / STREAMS_DIR / ped_id / f"{modality}.jsonl")
            for modality in STREAM_FIELDS
        }
        pedestrians[ped_id] = PedestrianStreams(ped_id=ped_id, **arrays)

    return Scene(
        config=config,
        transform=transform,
        reference_points=reference_points_to_world(records, config.rsu_geodetic),
        surveyed_rsu=geodetic_to_enu(surveyed, config.rsu_geodetic),
        pedestrians=pedestrians,
    )


def scene_dirs(root: Path) -> List[Path]:
    """Scene directories under root (or root itself), sorted by name"""
    root = Path(root)
    if (root / SCENE_FILE).exists():
        return [root]
    found = sorted(p.parent for p in root.glob(f"*/{SCENE_FILE}"))
    if not found:
        raise DataError(f"No scene directories found under {root}")
    return found


# ==================== Calibration ====================

def save_calibration(result: CalibrationResult, path: Path) -> Path:
    write_json(path, result.model_dump(mode="json"))
    logger.info("Calibration saved", path=str(path), rsu_error=result.rsu_error)
    return Path(path)


def load_calibration(path: Path) -> CalibrationResult:
    try:
        return CalibrationResult.model_validate(read_json(path))
    except ValidationError as e:
        raise DataError(f"Invalid calibration file {path}: {e}") from e


# ==================== Checkpoints ====================

def save_checkpoint(data: Dict[str, Any], path: Path) -> Path:
    write_json(path, data)
    logger.info("Checkpoint saved", path=str(path))
    return Path(path)


def load_checkpoint(path: Path, expected_format: str, expected_version: int) -> Dict[str, Any]:
    """
    Raises:
        CheckpointError: unreadable file, wrong format tag or version
    """
    try:
        data = read_json(path)
    except DataError as e:
        raise CheckpointError(str(e)) from e
    if data.get("format") != expected_format:
        raise CheckpointError(f"{path} is not a {expected_format} checkpoint")
    if data.get("version") != expected_version:
        raise CheckpointError(f"Unsupported checkpoint version {data.get('version')} (expected {expected_version})")
    return data


# ==================== Tables ====================

def _cell(value) -> str:
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def format_table_csv(table: ResultTable) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(table.header)
    for row in table.rows:
        writer.writerow([_cell(v) for v in row])
    return buffer.getvalue()


def format_table_markdown(table: ResultTable) -> str:
    """Aligned pipe table with a title heading"""
    cells = [list(table.header)] + [[_cell(v) for v in row] for row in table.rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(table.header))]

    def line(row):
        return "| " + " | ".join(value.ljust(width) for value, width in zip(row, widths)) + " |"

    out = [f"## {table.title}", "", line(cells[0]), "|" + "|".join("-" * (w + 2) for w in widths) + "|"]
    out.extend(line(row) for row in cells[1:])
    return "\n".join(out) + "\n"


def save_table(table: ResultTable, out_dir: Path, name: str) -> Path:
    """Write <name>.csv and <name>.md; returns the CSV path"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{name}.csv"
    csv_path.write_text(format_table_csv(table), encoding="utf-8")
    (out_dir / f"{name}.md").write_text(format_table_markdown(table), encoding="utf-8")
    logger.info("Table saved", name=name, rows=len(table.rows), path=str(csv_path))
    return csv_path


def loss_log_table(history: Sequence[LossReport]) -> ResultTable:
    return ResultTable(
        title="Training losses",
        header=["epoch", "l_emb", "l_d", "l_g_adv", "l_reg", "l_total", "lr"],
        rows=[[h.epoch, h.l_emb, h.l_d, h.l_g_adv, h.l_reg, h.l_total, h.lr] for h in history],
    )
