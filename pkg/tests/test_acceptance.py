"""
End-to-end acceptance checks at desk scale.

Every test here trains or labels hundreds of pairs and is deselected by default;
run with ``pytest -m slow``. Runs share one stage cache, so datasets and labels are
built once per session.
"""

import pytest

from main import main
from src.config.loader import dump_config
from src.core import dataset_io
from src.eval.benchmark import bench_runtime
from src.eval.reports import loglog_slope, non_increasing_within
from src.pipeline.estimators import StudentEstimator, TeacherEstimator
from src.pipeline.experiment import ExperimentArm, ExperimentConfig
from src.pipeline.orchestrator import create_orchestrator
from src.student.model import create_student_model
from src.student.pillars import PillarConfig
from src.teacher.nsfp import TeacherConfig
from src.teacher.pseudolabel import TeacherKind

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def orchestrator(tmp_path_factory):
    return create_orchestrator(tmp_path_factory.mktemp("stage_cache"))


@pytest.fixture(scope="module")
def desk_config():
    return ExperimentConfig.desk_scale(name="desk", train_n=200, val_n=20, seed=17, jobs=4)


def arm(cfg: ExperimentConfig, arm_kind: ExperimentArm, teacher: TeacherKind = TeacherKind.NSFP):
    return cfg.model_copy(update={"arm": arm_kind, "teacher": teacher})


class TestDistillation:
    """Student quality against its teacher and the zero-flow baseline."""

    def test_student_beats_zero_flow_and_tracks_teacher(self, orchestrator, desk_config):
        student = orchestrator.run_experiment(desk_config).report
        zero = orchestrator.run_experiment(arm(desk_config, ExperimentArm.ZERO_FLOW)).report
        teacher = orchestrator.run_experiment(arm(desk_config, ExperimentArm.TEACHER)).report

        assert student.threeway_epe < zero.threeway_epe
        assert student.fg_dynamic_epe < 2.0 * teacher.fg_dynamic_epe

    def test_teacher_quality_ordering(self, orchestrator, desk_config):
        epe = {
            kind: orchestrator.run_experiment(arm(desk_config, ExperimentArm.DISTILL, kind)).report.threeway_epe
            for kind in TeacherKind
        }
        assert epe[TeacherKind.GT] < epe[TeacherKind.NSFP] < epe[TeacherKind.NN]
        assert epe[TeacherKind.NSFP] - epe[TeacherKind.GT] < epe[TeacherKind.NN] - epe[TeacherKind.GT]

    def test_scaling_is_non_increasing(self, orchestrator, desk_config):
        curve = orchestrator.run_scaling(desk_config, [0.1, 0.5, 1.0])
        assert non_increasing_within(curve, tolerance=0.10)
        assert loglog_slope(curve) <= 0.0


class TestInferenceSpeed:
    def test_student_is_an_order_of_magnitude_faster(self, orchestrator, desk_config):
        result = orchestrator.run_experiment(arm(desk_config, ExperimentArm.ZERO_FLOW))
        samples = dataset_io.load_split(result.stage_dirs["dataset"] / "val", limit=20)

        student = StudentEstimator(create_student_model(PillarConfig.desk_scale()))
        teacher = TeacherEstimator(TeacherKind.NSFP, TeacherConfig())
        student_ms = bench_runtime(student, samples, repeats=3).mean_ms
        teacher_ms = bench_runtime(teacher, samples, repeats=3).mean_ms

        assert teacher_ms >= 10.0 * student_ms


class TestDeterminism:
    """The step-by-step CLI path reproduces every artifact byte for byte."""

    def run_pipeline(self, root, config_file, teacher_file):
        dataset, labels = root / "dataset", root / "dataset" / "labels" / "nsfp"
        model, report = root / "student.zfck", root / "report.csv"
        steps = [
            ["generate", "--config", str(config_file), "--out", str(dataset)],
            ["pseudolabel", "--dataset", str(dataset), "--teacher", "nsfp", "--jobs", "8", "--seed", "3",
             "--config", str(teacher_file)],
            ["train", "--dataset", str(dataset), "--labels", str(labels), "--config", str(config_file),
             "--out", str(model)],
            ["eval", "--model", str(model), "--dataset", str(dataset), "--report", str(report)],
        ]
        for argv in steps:
            assert main(argv) == 0
        files = sorted(labels.glob("*.zffl")) + [model, report]
        return {path.relative_to(root): path.read_bytes() for path in files}

    def test_repeated_runs_are_byte_identical(self, tmp_path, tiny_experiment_config):
        cfg = tiny_experiment_config.model_copy(update={"teacher": TeacherKind.NSFP})
        config_file = dump_config(cfg, tmp_path / "config.json")
        teacher_file = dump_config(TeacherConfig(mlp_widths=(3, 32, 32, 3), max_iters=50), tmp_path / "teacher.json")

        first = self.run_pipeline(tmp_path / "first", config_file, teacher_file)
        second = self.run_pipeline(tmp_path / "second", config_file, teacher_file)

        assert len(first) == cfg.train_n + 2
        assert first.keys() == second.keys()
        for name in first:
            assert first[name] == second[name], name
