#!/usr/bin/env python3
"""
flowdistill - scene-flow distillation toolkit, command-line entry point

Subcommands cover each pipeline step (generate, pseudolabel, train, eval, heatmap, bench)
and the cached multi-stage experiments (scaling, compare).

Exit codes: 0 on success, 1 on usage or configuration errors, 2 on runtime failures.
Logs go to stderr; data goes only to the declared output paths (``bench`` prints one
JSON line to stdout when no ``--report`` is given).
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import pandas as pd

from src.config import settings
from src.config.loader import load_config
from src.core import dataset_io
from src.core.errors import ConfigError, FlowDistillError, StageError, UsageError
from src.eval.benchmark import MIN_REPEATS, bench_runtime
from src.eval.heatmap import HeatmapSpec, merge_heatmaps, residual_heatmap, write_heatmap
from src.eval.metrics import evaluate_estimator
from src.eval.reports import loglog_slope, report_row, report_table, write_report
from src.pipeline.dataset import dataset_area, generate_dataset
from src.pipeline.estimators import StudentEstimator, create_estimator
from src.pipeline.experiment import ExperimentConfig
from src.pipeline.orchestrator import create_orchestrator
from src.pipeline.progress import ProgressReporter, progress_logger
from src.student.model import create_student_model, ensure_area_matches, load_student, save_student, student_forward
from src.student.trainer import load_training_pairs, train_student, write_epoch_log
from src.teacher.nsfp import TeacherConfig
from src.teacher.pseudolabel import MANIFEST_NAME, TeacherKind, failed_indices, pseudolabel_dataset
from src.tools.report_tool import report_tool

logger = logging.getLogger("flowdistill")

ESTIMATORS = ("student", "zero_flow", *(kind.value for kind in TeacherKind))


class ArgumentParser(argparse.ArgumentParser):
    """argparse parser that raises UsageError instead of exiting."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def setup_logging(level: str = settings.LOG_LEVEL) -> None:
    root = logging.getLogger()
    root.handlers.clear()
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(settings.LOG_FORMAT))
    root.addHandler(handler)
    root.setLevel(level)

    progress_logger.handlers.clear()
    progress_handler = logging.StreamHandler(sys.stderr)
    progress_handler.setFormatter(logging.Formatter("%(message)s"))
    progress_logger.addHandler(progress_handler)
    progress_logger.setLevel(logging.INFO)
    progress_logger.propagate = False


def _existing(path: Optional[str], what: str, directory: bool = False) -> Path:
    if path is None:
        raise UsageError(f"missing {what}")
    resolved = Path(path)
    if directory and not resolved.is_dir():
        raise UsageError(f"{what} directory not found: {resolved}")
    if not directory and not resolved.is_file():
        raise UsageError(f"{what} file not found: {resolved}")
    return resolved


def _split_dir(dataset: Path, split: str) -> Path:
    return _existing(str(dataset / split), f"dataset split '{split}'", directory=True)


def _default_crop(area_half_extent: float) -> float:
    return area_half_extent * settings.EVAL_HALF_EXTENT / settings.TRAIN_HALF_EXTENT


def _checked_student(model_path: str, dataset: Path):
    model = load_student(_existing(model_path, "checkpoint"))
    ensure_area_matches(model, dataset_area(dataset))
    return model


def _check_repeats(repeats: int) -> None:
    if repeats < MIN_REPEATS:
        raise UsageError(f"--repeats must be >= {MIN_REPEATS}, got {repeats}")


def _parse_fractions(text: str) -> List[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise UsageError(f"--fractions must be comma-separated numbers, got '{text}'") from e


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_generate(args) -> int:
    cfg = load_config(_existing(args.config, "config"), ExperimentConfig, seed=args.seed)
    out = generate_dataset(cfg, args.out, ProgressReporter("generate", cfg.train_n + cfg.val_n))
    logger.info("✓ Dataset written to %s", out)
    return 0


def cmd_pseudolabel(args) -> int:
    dataset = _existing(args.dataset, "dataset", directory=True)
    _split_dir(dataset, args.split)
    teacher_cfg = load_config(_existing(args.config, "teacher config"), TeacherConfig) if args.config else TeacherConfig()
    summary = pseudolabel_dataset(
        dataset,
        args.teacher,
        teacher_cfg,
        parallelism=args.jobs,
        global_seed=args.seed or 0,
        split=args.split,
        labels_dir=args.out,
        on_progress=ProgressReporter("pseudolabel", 0),
    )
    if summary.failure_fraction > settings.MAX_LABEL_FAILURE_FRACTION:
        raise StageError(
            "pseudolabel",
            f"{len(summary.failures)} of {summary.total} pairs failed; see {summary.labels_dir}",
        )
    logger.info("✓ %d labels written to %s", len(summary.written), summary.labels_dir)
    return 0


def cmd_train(args) -> int:
    dataset = _existing(args.dataset, "dataset", directory=True)
    labels = _existing(args.labels, "labels", directory=True)
    cfg = load_config(_existing(args.config, "config"), ExperimentConfig)
    train_cfg = cfg.train if args.seed is None else cfg.train.model_copy(update={"seed": args.seed})

    model = create_student_model(cfg.pillar, seed=train_cfg.seed)
    ensure_area_matches(model, dataset_area(dataset))
    failed = failed_indices(labels)
    indices = [i for i in dataset_io.list_sample_indices(_split_dir(dataset, "train")) if i not in failed]
    if failed:
        logger.warning("Skipping %d pair(s) the teacher failed on (see %s)", len(failed), labels / MANIFEST_NAME)
    if not indices:
        raise UsageError(f"every pair of the train split of {dataset} failed labeling in {labels}")
    # any other missing label raises FileNotFoundError
    pairs = load_training_pairs(dataset, labels, indices)
    val_dir = dataset / "val"
    val = dataset_io.load_split(val_dir) if val_dir.is_dir() else None

    result = train_student(
        model, pairs, train_cfg, val_samples=val, eval_half_extent=cfg.eval_half_extent,
        on_epoch=ProgressReporter("train", train_cfg.epochs),
    )
    out = save_student(result.model, args.out)
    epoch_log = Path(args.epoch_log) if args.epoch_log else out.with_name(f"{out.stem}_epochs.csv")
    write_epoch_log(result.epoch_log, epoch_log)
    logger.info("✓ Checkpoint %s, epoch log %s", out, epoch_log)
    return 0


def cmd_eval(args) -> int:
    dataset = _existing(args.dataset, "dataset", directory=True)
    model = _checked_student(args.model, dataset)
    crop = args.crop if args.crop is not None else _default_crop(model.config.area_half_extent)
    samples = dataset_io.load_split(_split_dir(dataset, args.split))
    report = evaluate_estimator(StudentEstimator(model), samples, crop)
    path = write_report(report_table([report_row(args.method, report)]), args.report)
    logger.info("Evaluation report:\n%s", report_tool.read_and_format(path))
    return 0


def cmd_heatmap(args) -> int:
    dataset = _existing(args.dataset, "dataset", directory=True)
    model = _checked_student(args.model, dataset)
    spec = load_config(_existing(args.spec, "heatmap spec"), HeatmapSpec) if args.spec else HeatmapSpec()
    samples = dataset_io.load_split(_split_dir(dataset, args.split))
    heatmap = merge_heatmaps(
        residual_heatmap(student_forward(model, s.cloud_t, s.cloud_t1), s.gt_flow, s.dt_seconds, spec)
        for s in samples
    )
    paths = write_heatmap(heatmap, args.out, args.method)
    logger.info(
        "✓ Heatmap of %d moving points (%d outside the extent): %s",
        heatmap.n_moving, heatmap.n_outside, ", ".join(str(p) for p in paths.values()),
    )
    return 0


def cmd_scaling(args) -> int:
    cfg = load_config(_existing(args.config, "config"), ExperimentConfig, seed=args.seed)
    fractions = _parse_fractions(args.fractions)
    try:
        curve = create_orchestrator().run_scaling(cfg, fractions)
    except ValueError as e:
        raise UsageError(str(e)) from e
    out = Path(args.out) if args.out else Path(cfg.output_dir or ".") / "scaling.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    curve.to_csv(out, index=False, float_format="%.6f", na_rep="")
    if len(curve) >= 2:
        logger.info("Log-log slope of Threeway EPE: %.4f", loglog_slope(curve))
    logger.info("Scaling curve:\n%s", report_tool.read_and_format(out))
    return 0


def cmd_compare(args) -> int:
    _check_repeats(args.repeats)
    configs_dir = _existing(args.configs, "configs", directory=True)
    files = sorted(p for p in configs_dir.glob("*.json"))
    if not files:
        raise UsageError(f"no *.json experiment configs in {configs_dir}")
    arms = {p.stem: load_config(p, ExperimentConfig, seed=args.seed) for p in files}
    table = create_orchestrator().compare_methods(arms, bench_samples=args.bench_samples, repeats=args.repeats)
    out = write_report(table, args.out or configs_dir / "comparison.csv")
    logger.info("Comparison:\n%s", report_tool.read_and_format(out))
    return 0


def cmd_bench(args) -> int:
    _check_repeats(args.repeats)
    dataset = _existing(args.dataset, "dataset", directory=True)
    model = None
    if args.estimator == "student":
        model = _checked_student(args.model, dataset)
    teacher_cfg = TeacherConfig(seed=args.seed or 0)
    estimator = create_estimator(args.estimator, model=model, teacher_config=teacher_cfg)
    samples = dataset_io.load_split(_split_dir(dataset, args.split), limit=args.samples)
    stats = bench_runtime(estimator, samples, args.repeats)
    if args.report:
        row = {"method": args.estimator, **stats.to_dict()}
        path = Path(args.report)
        path.parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame([row]).to_csv(path, index=False, float_format="%.6f")
    else:
        print(json.dumps({"method": args.estimator, **stats.to_dict()}))
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> ArgumentParser:
    common = ArgumentParser(add_help=False)
    common.add_argument(
        "--seed", type=int, default=None,
        help="Integer seed overriding the config's seed (default: value from the config, else 0)",
    )

    parser = ArgumentParser(
        prog="flowdistill",
        description="Scene-flow distillation toolkit: synthetic data, teachers, student training and evaluation",
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=ArgumentParser)
    sub.required = True

    p = sub.add_parser("generate", parents=[common], help="Generate a synthetic train/val dataset")
    p.add_argument("--config", required=True, help="Experiment config JSON (scene, sizes, diversity)")
    p.add_argument("--out", required=True, help="Output dataset directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("pseudolabel", parents=[common], help="Label a dataset split with a teacher")
    p.add_argument("--dataset", required=True, help="Dataset directory")
    p.add_argument("--teacher", required=True, choices=[k.value for k in TeacherKind], help="Teacher to run")
    p.add_argument("--jobs", type=int, default=1, help="Worker processes (count, default: 1)")
    p.add_argument("--config", help="Teacher config JSON (default: built-in teacher settings)")
    p.add_argument("--split", default="train", help="Split to label (default: train)")
    p.add_argument("--out", help="Labels directory (default: <dataset>/labels/<teacher>)")
    p.set_defaults(func=cmd_pseudolabel)

    p = sub.add_parser("train", parents=[common], help="Distill a student from pseudo-labels")
    p.add_argument("--dataset", required=True, help="Dataset directory")
    p.add_argument("--labels", required=True, help="Labels directory")
    p.add_argument("--config", required=True, help="Experiment config JSON (pillar grid, training, eval crop)")
    p.add_argument("--out", required=True, help="Output checkpoint path (.zfck)")
    p.add_argument("--epoch-log", help="Per-epoch CSV (default: <out stem>_epochs.csv next to the checkpoint)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="Threeway EPE of a student checkpoint")
    p.add_argument("--model", required=True, help="Student checkpoint (.zfck)")
    p.add_argument("--dataset", required=True, help="Dataset directory")
    p.add_argument("--crop", type=float, help="Evaluation half extent in meters (default: area scaled by 35/51.2)")
    p.add_argument("--report", required=True, help="Output report CSV")
    p.add_argument("--split", default="val", help="Split to evaluate (default: val)")
    p.add_argument("--method", default="student", help="Method name for the report row (default: student)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("heatmap", parents=[common], help="BEV residual heatmap of moving points")
    p.add_argument("--model", required=True, help="Student checkpoint (.zfck)")
    p.add_argument("--dataset", required=True, help="Dataset directory")
    p.add_argument("--spec", help="Heatmap spec JSON (extent in meters, bins, scale, rotated)")
    p.add_argument("--out", required=True, help="Output directory for the PGM and CSV")
    p.add_argument("--split", default="val", help="Split to use (default: val)")
    p.add_argument("--method", default="student", help="Method name used in file names (default: student)")
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("scaling", parents=[common], help="Threeway EPE against training-data fraction")
    p.add_argument("--config", required=True, help="Distill experiment config JSON")
    p.add_argument("--fractions", default="0.1,0.5,1.0", help="Ascending fractions in (0, 1] (default: 0.1,0.5,1.0)")
    p.add_argument("--out", help="Output CSV (default: <output_dir>/scaling.csv)")
    p.set_defaults(func=cmd_scaling)

    p = sub.add_parser("compare", parents=[common], help="Run and compare experiment arms on one val split")
    p.add_argument("--configs", required=True, help="Directory of experiment config JSONs, one arm each")
    p.add_argument("--out", help="Output CSV (default: <configs>/comparison.csv)")
    p.add_argument("--bench-samples", type=int, default=20, help="Val pairs timed per arm (count, default: 20)")
    p.add_argument("--repeats", type=int, default=MIN_REPEATS, help=f"Timing repeats (count, >= {MIN_REPEATS})")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("bench", parents=[common], help="Per-pair inference runtime in milliseconds")
    p.add_argument("--model", help="Student checkpoint (.zfck); required for --estimator student")
    p.add_argument("--dataset", required=True, help="Dataset directory")
    p.add_argument("--repeats", type=int, default=MIN_REPEATS, help=f"Timing repeats (count, >= {MIN_REPEATS})")
    p.add_argument("--samples", type=int, default=20, help="Pairs to time (count, default: 20)")
    p.add_argument("--estimator", default="student", choices=ESTIMATORS, help="Estimator to time (default: student)")
    p.add_argument("--split", default="val", help="Split to time on (default: val)")
    p.add_argument("--report", help="Write runtime CSV here instead of JSON on stdout")
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main function to run the flowdistill command line."""
    setup_logging()
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except (ConfigError, UsageError) as e:
        logger.error("%s", e)
        return 1
    except FileNotFoundError as e:
        logger.error("Missing input: %s", e)
        return 1
    except FlowDistillError as e:
        logger.error("%s", e)
        return 2
    except Exception as e:
        logger.error("Unexpected failure: %s: %s", type(e).__name__, e)
        logger.debug("Traceback", exc_info=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
