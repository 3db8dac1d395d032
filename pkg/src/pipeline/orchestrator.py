"""
ExperimentOrchestrator - staged distillation pipeline

Runs one experiment as four cached stages:
1. dataset   - synthetic train/val frame pairs
2. labels    - teacher pseudo-labels for the train split
3. train     - student distillation on the pseudo-labels
4. eval      - Threeway EPE on the val split under the evaluation crop

Every stage is keyed by a chained config hash, so re-running an unchanged experiment
only reads the cache.
"""

import json
import logging
import shutil
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Union

import pandas as pd

from src.config import settings
from src.core import dataset_io
from src.core.errors import CacheCorruptionError, ConfigError, FlowDistillError, StageError
from src.eval.benchmark import bench_runtime
from src.eval.metrics import ThreewayReport, evaluate_estimator
from src.eval.reports import (
    VarianceResult, report_row, report_table, scaling_curve, subset_size, variance_report, write_report,
)
from src.pipeline.cache import StageCache, StageRecord
from src.pipeline.dataset import generate_dataset
from src.pipeline.estimators import Estimator, StudentEstimator, TeacherEstimator, zero_flow_estimator
from src.pipeline.experiment import ExperimentArm, ExperimentConfig
from src.pipeline.progress import ProgressReporter
from src.student.model import StudentModel, create_student_model, load_student, save_student
from src.student.trainer import load_training_pairs, train_student, write_epoch_log
from src.teacher.pseudolabel import pseudolabel_dataset

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "model.zfck"
EPOCH_LOG_NAME = "epoch_log.csv"
REPORT_NAME = "report.csv"
MANIFEST_NAME = "manifest.json"


def method_label(cfg: ExperimentConfig) -> str:
    if cfg.arm is ExperimentArm.ZERO_FLOW:
        return "zero_flow"
    if cfg.arm is ExperimentArm.TEACHER:
        return f"teacher_{cfg.teacher.value}"
    return f"student_{cfg.teacher.value}"


@dataclass
class ExperimentResult:
    name: str
    report: ThreewayReport
    model: Optional[StudentModel]
    artifacts_dir: Optional[Path]
    manifest: Dict[str, Any]
    stage_dirs: Dict[str, Path] = field(default_factory=dict)


class ExperimentOrchestrator:
    """
    Orchestrator for the distillation pipeline.

    Stages are rebuilt only when their hash is not in the cache; a cached stage whose
    files no longer match their recorded checksums is reported, never silently reused.
    """

    def __init__(self, cache_dir: Optional[Union[str, Path]] = None):
        """
        Initialize the orchestrator.

        Args:
            cache_dir: Stage cache root (default: settings.CACHE_DIR)
        """
        self.cache = StageCache(cache_dir)

    def _stage(self, stage: str, stage_hash: str, build: Callable[[Path], Optional[Dict[str, Any]]]) -> StageRecord:
        record = self.cache.lookup(stage, stage_hash)
        if record is not None:
            return record
        directory = self.cache.prepare(stage, stage_hash)
        start = time.perf_counter()
        try:
            extra = build(directory)
        except (StageError, CacheCorruptionError):
            raise
        except FlowDistillError as exc:
            raise StageError(stage, str(exc)) from exc
        except Exception as exc:
            raise StageError(stage, f"{type(exc).__name__}: {exc}") from exc
        return self.cache.commit(stage, stage_hash, time.perf_counter() - start, extra)

    def dataset_stage(self, cfg: ExperimentConfig) -> StageRecord:
        def build(directory: Path):
            generate_dataset(cfg, directory, ProgressReporter("generate", cfg.train_n + cfg.val_n))
            return {"train_n": cfg.train_n, "val_n": cfg.val_n}

        return self._stage("dataset", cfg.dataset_hash(), build)

    def labels_stage(self, cfg: ExperimentConfig, dataset_dir: Path) -> StageRecord:
        def build(directory: Path):
            summary = pseudolabel_dataset(
                dataset_dir,
                cfg.teacher,
                cfg.teacher_config,
                parallelism=cfg.jobs,
                global_seed=cfg.seed,
                labels_dir=directory,
                on_progress=ProgressReporter("pseudolabel", cfg.train_n),
            )
            if summary.failure_fraction > settings.MAX_LABEL_FAILURE_FRACTION:
                raise StageError(
                    "labels",
                    f"{len(summary.failures)} of {summary.total} pairs failed "
                    f"(limit {settings.MAX_LABEL_FAILURE_FRACTION:.0%})",
                )
            return {"written": sorted(summary.written), "failures": len(summary.failures)}

        return self._stage("labels", cfg.labels_hash(), build)

    def train_stage(
        self,
        cfg: ExperimentConfig,
        dataset_dir: Path,
        labels: StageRecord,
        train_limit: Optional[int] = None,
    ) -> StageRecord:
        labels_dir = self.cache.stage_dir(labels.stage, labels.stage_hash)

        def build(directory: Path):
            indices = sorted(dataset_io.list_sample_indices(dataset_dir / "train"))
            if train_limit is not None:
                indices = indices[:train_limit]
            labeled = set(labels.extra.get("written", indices))
            indices = [i for i in indices if i in labeled]
            pairs = load_training_pairs(dataset_dir, labels_dir, indices)
            val = dataset_io.load_split(dataset_dir / "val")
            model = create_student_model(cfg.pillar, seed=cfg.train.seed)
            result = train_student(
                model, pairs, cfg.train, val_samples=val, eval_half_extent=cfg.eval_half_extent,
                on_epoch=ProgressReporter("train", cfg.train.epochs),
            )
            save_student(result.model, directory / CHECKPOINT_NAME)
            write_epoch_log(result.epoch_log, directory / EPOCH_LOG_NAME)
            # labels are read-only inputs
            self.cache.verify(labels)
            return {"train_pairs": len(pairs)}

        return self._stage("train", cfg.train_hash(train_limit), build)

    def _estimator(self, cfg: ExperimentConfig, train: Optional[StageRecord]) -> Estimator:
        if cfg.arm is ExperimentArm.ZERO_FLOW:
            return zero_flow_estimator
        if cfg.arm is ExperimentArm.TEACHER:
            return TeacherEstimator(cfg.teacher, cfg.teacher_config)
        return StudentEstimator(load_student(self.cache.stage_dir(train.stage, train.stage_hash) / CHECKPOINT_NAME))

    def eval_stage(
        self,
        cfg: ExperimentConfig,
        dataset_dir: Path,
        train: Optional[StageRecord],
        train_limit: Optional[int] = None,
    ) -> StageRecord:
        def build(directory: Path):
            estimator = self._estimator(cfg, train)
            report = evaluate_estimator(estimator, dataset_io.load_split(dataset_dir / "val"), cfg.eval_half_extent)
            write_report(report_table([report_row(method_label(cfg), report)]), directory / REPORT_NAME)
            return {"report": asdict(report)}

        return self._stage("eval", cfg.eval_hash(train_limit), build)

    def run_experiment(self, cfg: ExperimentConfig, train_limit: Optional[int] = None) -> ExperimentResult:
        """
        Run (or reuse) every stage of one experiment.

        Args:
            cfg: Experiment configuration
            train_limit: Train on only the leading ``train_limit`` pairs

        Returns:
            ExperimentResult with the evaluation report and, for distillation, the model

        Raises:
            StageError: naming the stage that failed
            CacheCorruptionError: if a cached artifact was modified
        """
        steps = 4 if cfg.arm is ExperimentArm.DISTILL else 2
        logger.info("Experiment '%s' (%s arm, config %s)", cfg.name, cfg.arm.value, cfg.config_hash()[:12])

        logger.info("Step 1/%d: Synthetic dataset...", steps)
        dataset = self.dataset_stage(cfg)
        dataset_dir = self.cache.stage_dir(dataset.stage, dataset.stage_hash)
        records: Dict[str, StageRecord] = {"dataset": dataset}

        train = None
        if cfg.arm is ExperimentArm.DISTILL:
            logger.info("Step 2/%d: Pseudo-labeling train split with '%s'...", steps, cfg.teacher.value)
            records["labels"] = self.labels_stage(cfg, dataset_dir)
            logger.info("Step 3/%d: Training student...", steps)
            train = self.train_stage(cfg, dataset_dir, records["labels"], train_limit)
            records["train"] = train

        logger.info("Step %d/%d: Evaluating on val split...", steps, steps)
        evaluation = self.eval_stage(cfg, dataset_dir, train, train_limit)
        records["eval"] = evaluation
        report = ThreewayReport(**evaluation.extra["report"])
        logger.info(
            "✓ Threeway EPE %.5f (dynamic FG %s, static FG %s, BG %s)",
            report.threeway_epe, _fmt(report.fg_dynamic_epe), _fmt(report.fg_static_epe), _fmt(report.bg_epe),
        )

        stage_dirs = {name: self.cache.stage_dir(r.stage, r.stage_hash) for name, r in records.items()}
        manifest = {
            "name": cfg.name,
            "config_hash": cfg.config_hash(),
            "config": cfg.model_dump(mode="json", exclude={"output_dir", "jobs"}),
            "stages": {name: {"hash": r.stage_hash, "wall_time_s": r.wall_time_s} for name, r in records.items()},
            "seeds": {"global": cfg.seed, "teacher": cfg.teacher_config.seed, "train": cfg.train.seed},
            "train_limit": train_limit,
            "tool_version": settings.TOOL_VERSION,
        }
        model = load_student(stage_dirs["train"] / CHECKPOINT_NAME) if train is not None else None
        artifacts_dir = self._export(cfg, stage_dirs, manifest) if cfg.output_dir else None
        return ExperimentResult(cfg.name, report, model, artifacts_dir, manifest, stage_dirs)

    def _export(self, cfg: ExperimentConfig, stage_dirs: Mapping[str, Path], manifest: Dict[str, Any]) -> Path:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(stage_dirs["eval"] / REPORT_NAME, out / REPORT_NAME)
        if "train" in stage_dirs:
            for name in (CHECKPOINT_NAME, Path(CHECKPOINT_NAME).with_suffix(".json").name, EPOCH_LOG_NAME):
                shutil.copyfile(stage_dirs["train"] / name, out / name)
        (out / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True))
        logger.info("✓ Artifacts written to %s", out)
        return out

    def compare_methods(
        self,
        arms: Mapping[str, ExperimentConfig],
        bench_samples: int = 20,
        repeats: int = 3,
    ) -> pd.DataFrame:
        """
        Run every arm and combine the reports into one table sorted by Threeway EPE.

        Raises:
            ConfigError: if fewer than two arms are given or their val splits differ
        """
        if len(arms) < 2:
            raise ConfigError(f"compare needs at least 2 arms, got {len(arms)}")
        val_hashes = {name: cfg.val_split_hash() for name, cfg in arms.items()}
        if len(set(val_hashes.values())) > 1:
            names = ", ".join(f"{n}={h[:8]}" for n, h in sorted(val_hashes.items()))
            raise ConfigError(f"arms do not share the same val split: {names}")

        rows = []
        for name, cfg in arms.items():
            logger.info("Comparison arm '%s'", name)
            result = self.run_experiment(cfg)
            val_dir = result.stage_dirs["dataset"] / "val"
            samples = dataset_io.load_split(val_dir, limit=bench_samples)
            estimator = self._estimator(cfg, _record_for(result, "train"))
            rows.append(report_row(name, result.report, bench_runtime(estimator, samples, repeats)))
        return report_table(rows, sort=True)

    def run_scaling(self, cfg: ExperimentConfig, fractions: Sequence[float]) -> pd.DataFrame:
        """Train on leading fractions of the train split; every point uses the same val split."""
        if cfg.arm is not ExperimentArm.DISTILL:
            raise ConfigError("scaling runs need the distill arm")

        def evaluate_fraction(fraction: float) -> ThreewayReport:
            return self.run_experiment(cfg, train_limit=subset_size(cfg.train_n, fraction)).report

        return scaling_curve(list(fractions), evaluate_fraction)

    def run_variance(self, cfg: ExperimentConfig, seeds: Sequence[int]) -> VarianceResult:
        """Retrain the student from scratch once per seed on the same labels."""

        def train_with_seed(seed: int) -> ThreewayReport:
            seeded = cfg.model_copy(update={"train": cfg.train.model_copy(update={"seed": seed})})
            return self.run_experiment(seeded).report

        return variance_report(train_with_seed, list(seeds))


def _record_for(result: ExperimentResult, stage: str) -> Optional[StageRecord]:
    stage_dir = result.stage_dirs.get(stage)
    if stage_dir is None:
        return None
    return StageRecord(stage=stage, stage_hash=stage_dir.name, wall_time_s=0.0, checksums={})


def _fmt(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.5f}"


def create_orchestrator(cache_dir: Optional[Union[str, Path]] = None) -> ExperimentOrchestrator:
    """
    Factory function to create the orchestrator.

    Args:
        cache_dir: Stage cache root (default: settings.CACHE_DIR)

    Returns:
        ExperimentOrchestrator instance
    """
    return ExperimentOrchestrator(cache_dir=cache_dir)


def run_experiment(cfg: ExperimentConfig, cache_dir: Optional[Union[str, Path]] = None) -> ExperimentResult:
    return create_orchestrator(cache_dir).run_experiment(cfg)


def compare_methods(
    arms: Mapping[str, ExperimentConfig], cache_dir: Optional[Union[str, Path]] = None, **kwargs
) -> pd.DataFrame:
    return create_orchestrator(cache_dir).compare_methods(arms, **kwargs)
