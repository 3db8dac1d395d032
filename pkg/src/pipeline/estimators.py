"""
Flow estimators with a common ``(sample) -> FlowField`` signature, used for evaluation
and runtime benchmarks.
"""

from typing import Callable, Optional

from src.core.types import FlowField, SceneSample
from src.student.model import StudentModel, student_forward
from src.teacher.nsfp import TeacherConfig
from src.teacher.pseudolabel import TeacherKind, create_teacher

Estimator = Callable[[SceneSample], FlowField]


def zero_flow_estimator(sample: SceneSample) -> FlowField:
    """All-zero flow: exact for every static point in the ego-compensated frame."""
    return FlowField.zeros(len(sample.cloud_t))


class StudentEstimator:
    def __init__(self, model: StudentModel):
        self.model = model

    def __call__(self, sample: SceneSample) -> FlowField:
        return student_forward(self.model, sample.cloud_t, sample.cloud_t1)


class TeacherEstimator:
    """Runs a teacher directly on each pair with a fixed seed."""

    def __init__(self, teacher: TeacherKind, cfg: Optional[TeacherConfig] = None):
        self.cfg = cfg or TeacherConfig()
        self._label = create_teacher(teacher, self.cfg)

    def __call__(self, sample: SceneSample) -> FlowField:
        return self._label(sample, self.cfg.seed).flow


def create_estimator(
    kind: str,
    model: Optional[StudentModel] = None,
    teacher_config: Optional[TeacherConfig] = None,
) -> Estimator:
    """
    Factory function for the estimators the CLI and pipeline compare.

    Args:
        kind: ``student``, ``zero_flow``, or a teacher name (``nsfp``, ``nn``, ``gt``)
        model: Required for ``student``
        teacher_config: Teacher settings for teacher estimators
    """
    if kind == "zero_flow":
        return zero_flow_estimator
    if kind == "student":
        if model is None:
            raise ValueError("the student estimator needs a model")
        return StudentEstimator(model)
    return TeacherEstimator(TeacherKind(kind), teacher_config)
