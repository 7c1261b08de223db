#!/usr/bin/env python3
"""
viloc command line

Subcommands:
    simulate   SceneConfig -> <out>/<scene_id>-seq<k>/ scene directories
    calibrate  scene directories -> <out>/calibration/<scene_dir>.json
    makedata   scenes + calibrations -> train/test JSONL
    train      train JSONL -> model.json + losses.csv
    eval       model + test JSONL -> eval.csv (per scene and method)
    perturb    scenes + calibrations -> perturb.csv (retrain per level)
    ablate     train/test JSONL -> ablation.csv (retrain per feature mask)
    selftrain  train/test JSONL -> selftrain.csv (associate, expand, fine-tune)

Every run writes the resolved configuration to <out>/config.env.

Usage:
    python cli.py simulate --seed 7 --scene-id scene1 --sequences 2 --out run/scenes
    python cli.py calibrate --scenes run/scenes --out run
    python cli.py makedata --scenes run/scenes --calibration run/calibration --out run/data
    python cli.py train --train run/data/train.jsonl --out run/model
    python cli.py eval --checkpoint run/model/model.json --test run/data/test.jsonl --out run/eval

Exit codes: 0 success, 1 usage error, 2 data or I/O error, 3 training divergence.
"""

import argparse
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

# Add repository root to path for imports
sys.path.insert(0, str(Path(__file__).parent))

from pydantic import ValidationError

from config import RunConfig, load_config, write_snapshot
from errors import DataError, VilocError
from logger import get_logger, set_log_level
from models import FeatureMask
from src.calib import calibrate_scene
from src.dataset import read_jsonl, split_by_pedestrian, write_jsonl
from src.evaluation import (
    ABLATION_MASKS,
    ExperimentData,
    ablation,
    build_experiment_data,
    evaluate_methods,
    methods_table,
    perturbation_sweep,
    selftrain_table,
)
from src.gan import GanModel, load_model, save_model, train
from src.selftrain import run_selftraining
from src.sim import generate_scene
from storage import (
    format_table_markdown,
    load_calibration,
    load_scene,
    loss_log_table,
    save_calibration,
    save_scene,
    save_table,
    scene_dirs,
)

logger = get_logger(__name__)

DEFAULT_LEVELS = "0:0,5:0.5,15:1.5,30:3"
DEFAULT_MASKS = ",".join(ABLATION_MASKS)


class UsageError(Exception):
    """Command line could not be parsed"""


class VilocArgumentParser(argparse.ArgumentParser):
    """Prints the (sub)command help and reports usage errors as exit code 1"""

    def error(self, message: str):
        self.print_help(sys.stderr)
        sys.stderr.write(f"\n{self.prog}: error: {message}\n")
        raise UsageError(message)


# ==================== Argument Types ====================

def existing_path(value: str) -> Path:
    path = Path(value)
    if not path.exists():
        raise argparse.ArgumentTypeError(f"path does not exist: {value}")
    return path


def perturbation_levels(value: str) -> List[Tuple[float, float]]:
    """'5:0.5,15:1.5' -> [(5.0, 0.5), (15.0, 1.5)]"""
    try:
        levels = []
        for item in value.split(","):
            theta, t = item.split(":")
            levels.append((float(theta), float(t)))
        return levels
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"levels must look like 5:0.5,15:1.5 ({e})") from e


def feature_masks(value: str) -> List[FeatureMask]:
    try:
        return [FeatureMask.parse(item) for item in value.split(",")]
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from e


def feature_mask(value: str) -> FeatureMask:
    try:
        return FeatureMask.parse(value)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from e


# ==================== Parser ====================

def build_parser() -> VilocArgumentParser:
    parser = VilocArgumentParser(prog="viloc", description="Cross-modal pedestrian localization pipeline")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=existing_path, help="Config file (VILOC_KEY=value lines)")
    common.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="Log level override")
    common.add_argument("--out", type=Path, required=True, help="Output directory")
    common.add_argument("--seed", type=int, help="Root seed")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="Generate synthetic scene directories")
    p.add_argument("--scene-id", help="Scenario name")
    p.add_argument("--sequences", type=int, default=1, help="Number of sequences to generate")
    p.add_argument("--duration", type=float, help="Sequence length (s)")
    p.add_argument("--pedestrians", type=int, help="Pedestrians per sequence")
    p.add_argument("--gps-difficulty", type=float, help="GPS bias multiplier")

    p = sub.add_parser("calibrate", parents=[common], help="Calibrate each scene's camera-world transform")
    p.add_argument("--scenes", type=existing_path, required=True, help="Scene directory or a directory of scenes")

    p = sub.add_parser("makedata", parents=[common], help="Window scenes into train/test JSONL")
    p.add_argument("--scenes", type=existing_path, required=True)
    p.add_argument("--calibration", type=existing_path, required=True, help="Directory of calibration files")
    p.add_argument("--labeled-ped", help="Also split train windows into labeled/unlabeled for self-training")

    p = sub.add_parser("train", parents=[common], help="Train the GAN")
    p.add_argument("--train", type=existing_path, required=True, help="Training JSONL")
    p.add_argument("--epochs", type=int)
    p.add_argument("--mask", type=feature_mask, help="Phone features, e.g. FTM+IMU+GPS")

    p = sub.add_parser("eval", parents=[common], help="Evaluate GPS, particle filter and GAN")
    p.add_argument("--checkpoint", type=existing_path, required=True)
    p.add_argument("--test", type=existing_path, required=True, help="Test JSONL")

    p = sub.add_parser("perturb", parents=[common], help="Camera-world perturbation sweep")
    p.add_argument("--scenes", type=existing_path, required=True)
    p.add_argument("--calibration", type=existing_path, required=True)
    p.add_argument("--levels", type=perturbation_levels, default=perturbation_levels(DEFAULT_LEVELS),
                   help=f"sigma_theta:sigma_t pairs (default {DEFAULT_LEVELS})")
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("ablate", parents=[common], help="Phone feature ablation")
    p.add_argument("--train", type=existing_path, required=True)
    p.add_argument("--test", type=existing_path, required=True)
    p.add_argument("--masks", type=feature_masks, default=feature_masks(DEFAULT_MASKS),
                   help=f"Comma-separated masks (default {DEFAULT_MASKS})")
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("selftrain", parents=[common], help="Associate, expand and fine-tune")
    p.add_argument("--train", type=existing_path, required=True)
    p.add_argument("--test", type=existing_path, required=True)
    p.add_argument("--phone-only", type=existing_path, help="Phone-only JSONL to associate as well")
    p.add_argument("--checkpoint", type=existing_path, help="Start from a trained model instead of training one")
    p.add_argument("--labeled-ped")
    p.add_argument("--iterations", type=int)
    p.add_argument("--epochs", type=int)

    return parser


def config_overrides(args: argparse.Namespace) -> Dict:
    """Nested overrides for the flags that were given"""
    overrides: Dict = {}

    def put(section: Optional[str], key: str, value):
        if value is None:
            return
        if section is None:
            overrides[key] = value
        else:
            overrides.setdefault(section, {})[key] = value

    put(None, "seed", args.seed)
    put(None, "log_level", args.log_level)
    put("scene", "scene_id", getattr(args, "scene_id", None))
    put("scene", "duration", getattr(args, "duration", None))
    put("scene", "n_pedestrians", getattr(args, "pedestrians", None))
    put("scene", "gps_difficulty", getattr(args, "gps_difficulty", None))
    put("train", "epochs", getattr(args, "epochs", None))
    put("selftrain", "labeled_ped", getattr(args, "labeled_ped", None))
    put("selftrain", "iterations", getattr(args, "iterations", None))
    mask = getattr(args, "mask", None)
    if mask is not None:
        overrides["mask"] = mask.model_dump()
    return overrides


# ==================== Commands ====================

def _load_scenes(root: Path):
    return [(d, load_scene(d)) for d in scene_dirs(root)]


def _transforms(scenes, calibration_dir: Path):
    transforms = {}
    for scene_dir, scene in scenes:
        key = (scene.config.scene_id, scene.config.sequence)
        transforms[key] = load_calibration(calibration_dir / f"{scene_dir.name}.json").transform
    return transforms


def cmd_simulate(args: argparse.Namespace, cfg: RunConfig) -> int:
    if args.sequences < 1:
        raise UsageError("--sequences must be at least 1")
    for k in range(args.sequences):
        scene_cfg = cfg.scene.model_copy(update={"sequence": cfg.scene.sequence + k})
        scene = generate_scene(scene_cfg)
        path = save_scene(scene, args.out / f"{scene_cfg.scene_id}-seq{scene_cfg.sequence}")
        print(path)
    return 0


def cmd_calibrate(args: argparse.Namespace, cfg: RunConfig) -> int:
    for scene_dir in scene_dirs(args.scenes):
        scene = load_scene(scene_dir)
        result = calibrate_scene(scene.reference_points, scene.intrinsics, surveyed_rsu=scene.surveyed_rsu)
        path = save_calibration(result, args.out / "calibration" / f"{scene_dir.name}.json")
        print(f"{path}\treprojection_avg={result.reprojection_avg:.6f}\trsu_error={result.rsu_error:.6f}")
    return 0


def cmd_makedata(args: argparse.Namespace, cfg: RunConfig) -> int:
    scenes = _load_scenes(args.scenes)
    data = build_experiment_data([s for _, s in scenes], _transforms(scenes, args.calibration), cfg)
    write_jsonl(data.train, args.out / "train.jsonl")
    write_jsonl(data.test, args.out / "test.jsonl")
    write_jsonl(data.phone_only, args.out / "train_phone_only.jsonl")
    if args.labeled_ped:
        labeled, unlabeled = split_by_pedestrian(data.train, cfg.selftrain.labeled_ped)
        write_jsonl(labeled, args.out / "train_labeled.jsonl")
        write_jsonl(unlabeled, args.out / "train_unlabeled.jsonl")
    print(f"train={len(data.train)}\ttest={len(data.test)}\tphone_only={len(data.phone_only)}")
    return 0


def cmd_train(args: argparse.Namespace, cfg: RunConfig) -> int:
    model = GanModel(cfg.mask, cfg.train)
    _, history = train(model, read_jsonl(args.train))
    save_model(model, args.out / "model.json")
    save_table(loss_log_table(history), args.out, "losses")
    return 0


def cmd_eval(args: argparse.Namespace, cfg: RunConfig) -> int:
    model = load_model(args.checkpoint)
    table = methods_table(evaluate_methods(read_jsonl(args.test), model))
    save_table(table, args.out, "eval")
    print(format_table_markdown(table), end="")
    return 0


def cmd_perturb(args: argparse.Namespace, cfg: RunConfig) -> int:
    scenes = _load_scenes(args.scenes)
    table = perturbation_sweep(args.levels, [s for _, s in scenes], _transforms(scenes, args.calibration), cfg)
    save_table(table, args.out, "perturb")
    print(format_table_markdown(table), end="")
    return 0


def cmd_ablate(args: argparse.Namespace, cfg: RunConfig) -> int:
    data = ExperimentData(train=read_jsonl(args.train), test=read_jsonl(args.test))
    table = ablation(args.masks, data, cfg)
    save_table(table, args.out, "ablation")
    print(format_table_markdown(table), end="")
    return 0


def cmd_selftrain(args: argparse.Namespace, cfg: RunConfig) -> int:
    labeled, unlabeled = split_by_pedestrian(read_jsonl(args.train), cfg.selftrain.labeled_ped)
    if args.phone_only:
        unlabeled += [r for r in read_jsonl(args.phone_only) if r.ped != cfg.selftrain.labeled_ped]
    if args.checkpoint:
        model = load_model(args.checkpoint)
    else:
        model = GanModel(cfg.mask, cfg.train)
        train(model, labeled)
    model, reports = run_selftraining(model, labeled, unlabeled, read_jsonl(args.test), cfg.selftrain)
    save_model(model, args.out / "model_selftrained.json")
    table = selftrain_table(reports)
    save_table(table, args.out, "selftrain")
    print(format_table_markdown(table), end="")
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "calibrate": cmd_calibrate,
    "makedata": cmd_makedata,
    "train": cmd_train,
    "eval": cmd_eval,
    "perturb": cmd_perturb,
    "ablate": cmd_ablate,
    "selftrain": cmd_selftrain,
}


# ==================== Entry Point ====================

def run(argv: Optional[Sequence[str]] = None) -> int:
    """Parse, resolve configuration, dispatch; returns the process exit code"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError:
        return 1
    except SystemExit as e:
        return int(e.code or 0)

    try:
        cfg = load_config(args.config, **config_overrides(args))
    except ValidationError as e:
        sys.stderr.write(f"Invalid configuration:\n{e}\n")
        return 1

    set_log_level(cfg.log_level)
    logger.info("Command started", command=args.command, out=str(args.out), seed=cfg.seed)

    try:
        write_snapshot(cfg, args.out)
        code = COMMANDS[args.command](args, cfg)
    except UsageError as e:
        sys.stderr.write(f"error: {e}\n")
        return 1
    except VilocError as e:
        logger.error("Command failed", command=args.command, error=str(e), error_type=type(e).__name__)
        sys.stderr.write(f"{type(e).__name__}: {e}\n")
        return e.exit_code
    except OSError as e:
        logger.error("Command failed", command=args.command, error=str(e), error_type=type(e).__name__)
        sys.stderr.write(f"I/O error: {e}\n")
        return DataError.exit_code

    logger.info("Command finished", command=args.command)
    return code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
