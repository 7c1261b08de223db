"""
Tests for scene, calibration and table persistence
"""

import numpy as np
import pytest

from errors import DataError, MalformedRecord
from models import CalibrationResult, LossReport, NoiseConfig, ResultTable, SceneConfig, WorldCameraTransform
from src.sim import STREAM_FIELDS, generate_scene
from storage import (
    format_table_csv,
    format_table_markdown,
    load_calibration,
    load_scene,
    loss_log_table,
    save_calibration,
    save_scene,
    save_table,
    scene_dirs,
)
from tests.helpers import CircleTrajectory


@pytest.fixture
def scene():
    cfg = SceneConfig(scene_id="store", duration=10.0, n_pedestrians=1, noise=NoiseConfig.zero(), seed=2)
    return generate_scene(cfg, trajectories={"p0": CircleTrajectory([0.0, 10.0], 2.0, 1.0)})


def test_scene_round_trip(tmp_path, scene):
    """Test: every stream reloads exactly; reference points survive the geodetic round trip"""
    save_scene(scene, tmp_path / "store-seq0")
    loaded = load_scene(tmp_path / "store-seq0")
    assert loaded.config == scene.config
    np.testing.assert_array_equal(loaded.transform.rotation, scene.transform.rotation)
    for modality in STREAM_FIELDS:
        np.testing.assert_array_equal(loaded.pedestrians["p0"].stream(modality), scene.pedestrians["p0"].stream(modality))
    for got, expected in zip(loaded.reference_points, scene.reference_points):
        np.testing.assert_allclose(got.world, expected.world, atol=1e-6)
        np.testing.assert_array_equal(got.pixel, expected.pixel)
    np.testing.assert_allclose(loaded.surveyed_rsu, scene.surveyed_rsu, atol=1e-6)


def test_scene_save_is_byte_stable(tmp_path, scene):
    save_scene(scene, tmp_path / "a")
    save_scene(scene, tmp_path / "b")
    for path in sorted((tmp_path / "a").rglob("*.jsonl")):
        assert path.read_bytes() == (tmp_path / "b" / path.relative_to(tmp_path / "a")).read_bytes()


def test_malformed_stream_line(tmp_path, scene):
    save_scene(scene, tmp_path / "s")
    ftm = tmp_path / "s" / "streams" / "p0" / "ftm.jsonl"
    lines = ftm.read_text().splitlines()
    lines[1] = '{"t": 1.0}'
    ftm.write_text("\n".join(lines) + "\n")
    with pytest.raises(MalformedRecord) as exc:
        load_scene(tmp_path / "s")
    assert exc.value.line == 2


def test_scene_dirs(tmp_path, scene):
    save_scene(scene, tmp_path / "b-seq1")
    save_scene(scene, tmp_path / "a-seq0")
    assert [p.name for p in scene_dirs(tmp_path)] == ["a-seq0", "b-seq1"]
    assert scene_dirs(tmp_path / "a-seq0") == [tmp_path / "a-seq0"]
    with pytest.raises(DataError):
        scene_dirs(tmp_path / "a-seq0" / "streams")


def test_calibration_round_trip(tmp_path):
    result = CalibrationResult(transform=WorldCameraTransform.identity(), reprojection_avg=0.5,
                               reprojection_std=0.1, rsu_error=0.2, subset=[0, 2, 3, 1], candidates=12)
    loaded = load_calibration(save_calibration(result, tmp_path / "calibration" / "x.json"))
    assert loaded.model_dump(mode="json") == result.model_dump(mode="json")
    (tmp_path / "bad.json").write_text('{"transform": {}}')
    with pytest.raises(DataError):
        load_calibration(tmp_path / "bad.json")


# ==================== Tables ====================

def test_table_emitters(tmp_path):
    table = ResultTable(title="Errors", header=["method", "avg", "n"], rows=[["GPS", 1.5, 3], ["GAN", 0.25, 3]])
    assert format_table_csv(table) == "method,avg,n\nGPS,1.500000,3\nGAN,0.250000,3\n"
    markdown = format_table_markdown(table).splitlines()
    assert markdown[0] == "## Errors"
    assert markdown[2] == "| method | avg      | n |"
    assert markdown[4] == "| GPS    | 1.500000 | 3 |"

    csv_path = save_table(table, tmp_path, "errors")
    assert csv_path.read_text() == format_table_csv(table)
    assert (tmp_path / "errors.md").exists()


def test_loss_log_table():
    report = LossReport(epoch=1, l_emb=1.0, l_d=0.5, l_g_adv=0.25, l_reg=3.0, l_total=4.25, lr=1e-3)
    table = loss_log_table([report])
    assert table.header == ["epoch", "l_emb", "l_d", "l_g_adv", "l_reg", "l_total", "lr"]
    assert table.rows == [[1, 1.0, 0.5, 0.25, 3.0, 4.25, 1e-3]]
