"""
Tests for the command line: exit codes, determinism and run artifacts
"""

import pytest

from cli import build_parser, perturbation_levels, run


def tree_bytes(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


SIMULATE = ["simulate", "--seed", "7", "--scene-id", "cli", "--duration", "20", "--pedestrians", "2"]


# ==================== Exit Codes ====================

@pytest.mark.parametrize("argv", [
    [],
    ["bogus", "--out", "x"],
    ["train"],
    ["simulate", "--out", "x", "--sequences", "two"],
    ["ablate", "--train", "missing.jsonl", "--test", "missing.jsonl", "--out", "x"],
])
def test_usage_errors_exit_1(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert run(argv) == 1


def test_invalid_configuration_exits_1(tmp_path):
    assert run(["simulate", "--out", str(tmp_path), "--duration", "-5"]) == 1


def test_invalid_config_file_value_exits_1(tmp_path):
    config = tmp_path / "run.env"
    config.write_text("VILOC_TRAIN__BATCH_SIZE=1\n", encoding="utf-8")
    assert run(["simulate", "--out", str(tmp_path / "out"), "--config", str(config)]) == 1


def test_malformed_dataset_exits_2(tmp_path):
    data = tmp_path / "train.jsonl"
    data.write_text('{"scene": "s"}\nnot json\n', encoding="utf-8")
    assert run(["train", "--train", str(data), "--out", str(tmp_path / "model")]) == 2


def test_missing_scenes_exit_2(tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert run(["calibrate", "--scenes", str(empty), "--out", str(tmp_path / "out")]) == 2


def test_unwritable_output_exits_2(tmp_path):
    """Test: an --out path that is a regular file fails cleanly with exit code 2"""
    blocker = tmp_path / "blocker"
    blocker.write_text("", encoding="utf-8")
    assert run(SIMULATE + ["--out", str(blocker)]) == 2
    assert blocker.read_text(encoding="utf-8") == ""


def test_perturbation_levels_parse():
    assert perturbation_levels("0:0,5:0.5") == [(0.0, 0.0), (5.0, 0.5)]


def test_default_ablation_grid(tmp_path):
    """Test: ablate without --masks runs ten distinct sets, each FTM set paired with its RSSI swap"""
    data = tmp_path / "data.jsonl"
    data.write_text("", encoding="utf-8")
    args = build_parser().parse_args(["ablate", "--train", str(data), "--test", str(data), "--out", "x"])
    labels = [m.label for m in args.masks]
    assert len(set(labels)) == len(labels) == 10
    assert labels[0] == "FTM + IMU + GPS"
    assert {"GPS", "IMU", "FTM", "IMU + GPS"} <= set(labels)
    for ftm in ("FTM + IMU + GPS", "FTM + IMU", "FTM + GPS"):
        assert ftm in labels
        assert ftm.replace("FTM", "RSSI") in labels


# ==================== Artifacts ====================

def test_simulate_is_byte_identical(tmp_path):
    """Test: the same seed produces byte-identical scene directories"""
    assert run(SIMULATE + ["--out", str(tmp_path / "a")]) == 0
    assert run(SIMULATE + ["--out", str(tmp_path / "b")]) == 0
    first, second = tree_bytes(tmp_path / "a"), tree_bytes(tmp_path / "b")
    assert "cli-seq0/scene.json" in first
    assert first == second


def test_config_snapshot_written(tmp_path):
    """Test: config.env records the resolved seed hierarchy and file overrides"""
    config = tmp_path / "run.env"
    config.write_text("VILOC_TRAIN__EPOCHS=3\nVILOC_SEED=1\n", encoding="utf-8")
    out = tmp_path / "out"
    assert run(SIMULATE + ["--out", str(out), "--config", str(config)]) == 0
    lines = (out / "config.env").read_text(encoding="utf-8").splitlines()
    assert "VILOC_SEED=7" in lines
    assert "VILOC_SCENE__SEED=7" in lines
    assert "VILOC_TRAIN__EPOCHS=3" in lines
    assert "VILOC_SCENE__SCENE_ID=cli" in lines


@pytest.mark.slow
def test_pipeline_end_to_end(tmp_path, capsys):
    """Test: simulate -> calibrate -> makedata -> train -> eval"""
    scenes, data, model = tmp_path / "scenes", tmp_path / "data", tmp_path / "model"
    assert run(SIMULATE + ["--sequences", "2", "--out", str(scenes)]) == 0
    assert run(["calibrate", "--scenes", str(scenes), "--out", str(tmp_path)]) == 0
    assert run(["makedata", "--scenes", str(scenes), "--calibration", str(tmp_path / "calibration"),
                "--out", str(data), "--labeled-ped", "p0"]) == 0
    for name in ("train", "test", "train_phone_only", "train_labeled", "train_unlabeled"):
        assert (data / f"{name}.jsonl").exists()
    assert run(["train", "--train", str(data / "train.jsonl"), "--epochs", "2", "--out", str(model)]) == 0
    assert (model / "losses.csv").read_text().count("\n") == 3
    capsys.readouterr()
    assert run(["eval", "--checkpoint", str(model / "model.json"), "--test", str(data / "test.jsonl"),
                "--out", str(tmp_path / "eval")]) == 0
    printed = capsys.readouterr().out
    assert "Overall" in printed and "GAN" in printed
    assert (tmp_path / "eval" / "eval.csv").exists()
