"""
Offline pseudo-labeling of a dataset split.

Every frame pair is labeled independently with its own seed (``global_seed ^ index``),
so the label files do not depend on the worker count or on scheduling order. Results
are written by the parent process in index order.

Label file (little-endian): magic ``ZFFL``, version u32, count u32, flow f32[count, 3],
then final_loss f64, iters u32, wall_time_ms u64.
"""

import json
import logging
import struct
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from functools import partial
from pathlib import Path
from typing import Callable, Dict, List, Optional, Set, Tuple, Union

import numpy as np

from src.config import settings
from src.core import dataset_io
from src.core.errors import ConfigError, FormatError, UsageError
from src.core.types import FlowField, PseudoLabel, SceneSample
from src.neighbors.nn_teacher import nn_flow_teacher
from src.teacher.nsfp import TeacherConfig, nsfp_optimize

logger = logging.getLogger(__name__)

_HEADER = struct.Struct("<4sII")
_TRAILER = struct.Struct("<dIQ")
LABEL_SUFFIX = ".zffl"
MANIFEST_NAME = "manifest.json"
TIMINGS_NAME = "timings.json"

PathLike = Union[str, Path]
ProgressCallback = Callable[[int, int], None]


class TeacherKind(str, Enum):
    NSFP = "nsfp"
    NN = "nn"
    GT = "gt"


def encode_label(label: PseudoLabel) -> bytes:
    vectors = label.flow.vectors
    return b"".join([
        _HEADER.pack(settings.LABEL_MAGIC, settings.LABEL_VERSION, vectors.shape[0]),
        vectors.astype("<f4").tobytes(),
        _TRAILER.pack(float(label.final_loss), int(label.iters_run), int(label.wall_time_ms)),
    ])


def decode_label(payload: bytes, teacher_name: str = "") -> PseudoLabel:
    if len(payload) < _HEADER.size:
        raise FormatError("label file is shorter than its header")
    magic, version, count = _HEADER.unpack_from(payload)
    if magic != settings.LABEL_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {settings.LABEL_MAGIC!r}")
    if version != settings.LABEL_VERSION:
        raise FormatError(f"unsupported label version {version}")
    expected = _HEADER.size + 12 * count + _TRAILER.size
    if len(payload) != expected:
        raise FormatError(f"label file has {len(payload)} bytes, expected {expected}")
    flow = np.frombuffer(payload, dtype="<f4", count=3 * count, offset=_HEADER.size)
    final_loss, iters, wall_ms = _TRAILER.unpack_from(payload, _HEADER.size + 12 * count)
    return PseudoLabel(
        flow=FlowField(flow.reshape(count, 3).astype(np.float64)),
        teacher_name=teacher_name,
        final_loss=final_loss,
        iters_run=iters,
        wall_time_ms=wall_ms,
    )


def label_path(labels_dir: PathLike, index: int) -> Path:
    return Path(labels_dir) / f"{index:06d}{LABEL_SUFFIX}"


def save_label(label: PseudoLabel, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_label(label))
    return path


def load_label(path: PathLike, teacher_name: Optional[str] = None) -> PseudoLabel:
    """Read a label file; the teacher name defaults to the name of its directory."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"label file not found: {path}")
    try:
        return decode_label(path.read_bytes(), teacher_name or path.parent.name)
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def default_labels_dir(dataset_dir: PathLike, teacher: Union[str, TeacherKind]) -> Path:
    return Path(dataset_dir) / "labels" / TeacherKind(teacher).value


def label_pair(sample: SceneSample, seed: int, teacher: TeacherKind, cfg: TeacherConfig) -> PseudoLabel:
    """Label one frame pair with the chosen teacher."""
    if teacher is TeacherKind.GT:
        return PseudoLabel(flow=sample.gt_flow, teacher_name="gt", iters_run=0)
    if teacher is TeacherKind.NN:
        return nn_flow_teacher(sample.cloud_t, sample.cloud_t1, cfg.chamfer.truncation_radius)
    return nsfp_optimize(sample.cloud_t, sample.cloud_t1, cfg.model_copy(update={"seed": seed}))


def create_teacher(
    name: Union[str, TeacherKind], cfg: Optional[TeacherConfig] = None
) -> Callable[[SceneSample, int], PseudoLabel]:
    """
    Build a picklable single-pair labeler ``(sample, seed) -> PseudoLabel``.

    Raises:
        ConfigError: for an unknown teacher name
    """
    try:
        kind = TeacherKind(name)
    except ValueError as exc:
        choices = ", ".join(k.value for k in TeacherKind)
        raise ConfigError(f"unknown teacher '{name}' (expected one of: {choices})") from exc
    return partial(label_pair, teacher=kind, cfg=cfg or TeacherConfig())


def _label_task(task: Tuple[str, int, int, Callable]) -> Tuple[int, Optional[bytes], Optional[str], int]:
    sample_path, index, seed, labeler = task
    start = time.perf_counter()
    try:
        label = labeler(dataset_io.load_sample(sample_path), seed)
        payload = encode_label(label)
        wall_ms = int((time.perf_counter() - start) * 1000)
        return index, payload, None, max(wall_ms, int(label.wall_time_ms))
    except Exception as exc:
        return index, None, f"{type(exc).__name__}: {exc}", int((time.perf_counter() - start) * 1000)


def _strip_wall_time(payload: bytes) -> bytes:
    final_loss, iters, _ = _TRAILER.unpack_from(payload, len(payload) - _TRAILER.size)
    return payload[: len(payload) - _TRAILER.size] + _TRAILER.pack(final_loss, iters, 0)


def clear_labels(labels_dir: PathLike) -> int:
    """Delete label files, manifest and timings in ``labels_dir``; returns the label files removed."""
    labels_dir = Path(labels_dir)
    stale = sorted(labels_dir.glob(f"*{LABEL_SUFFIX}"))
    for path in stale:
        path.unlink()
    for name in (MANIFEST_NAME, TIMINGS_NAME):
        (labels_dir / name).unlink(missing_ok=True)
    return len(stale)


@dataclass
class LabelingSummary:
    labels_dir: Path
    total: int
    written: List[int] = field(default_factory=list)
    failures: Dict[int, str] = field(default_factory=dict)
    wall_time_ms: Dict[int, int] = field(default_factory=dict)

    @property
    def failure_fraction(self) -> float:
        return len(self.failures) / self.total if self.total else 0.0


def pseudolabel_dataset(
    dataset_dir: PathLike,
    teacher: Union[str, TeacherKind],
    cfg: Optional[TeacherConfig] = None,
    parallelism: int = 1,
    global_seed: int = 0,
    split: str = "train",
    labels_dir: Optional[PathLike] = None,
    deterministic: bool = True,
    on_progress: Optional[ProgressCallback] = None,
) -> LabelingSummary:
    """
    Write one label file per frame pair of ``<dataset_dir>/<split>``.

    Args:
        dataset_dir: Dataset root produced by the generate stage
        teacher: ``nsfp``, ``nn`` or ``gt``
        cfg: Teacher configuration; its ``seed`` is replaced per pair
        parallelism: Worker processes; 1 labels inline
        global_seed: Per-pair seed is ``global_seed ^ index``
        split: Split directory to label
        labels_dir: Output directory, default ``<dataset_dir>/labels/<teacher>``
        deterministic: Store ``wall_time_ms = 0`` in label files (timings go to ``timings.json``)
        on_progress: Called with ``(done, total)`` after each pair

    Returns:
        LabelingSummary; failed pairs are listed in ``manifest.json`` and do not abort the run
    """
    if parallelism < 1:
        raise UsageError(f"parallelism must be >= 1, got {parallelism}")
    labeler = create_teacher(teacher, cfg)
    kind = TeacherKind(teacher)
    split_dir = Path(dataset_dir) / split
    out_dir = Path(labels_dir) if labels_dir is not None else default_labels_dir(dataset_dir, kind)
    out_dir.mkdir(parents=True, exist_ok=True)
    stale = clear_labels(out_dir)
    if stale:
        logger.info("Removed %d label file(s) of an earlier run from %s", stale, out_dir)

    indices = dataset_io.list_sample_indices(split_dir)
    tasks = [
        (str(dataset_io.sample_stem(split_dir, index).with_suffix(dataset_io.SAMPLE_SUFFIX)),
         index, global_seed ^ index, labeler)
        for index in indices
    ]
    summary = LabelingSummary(labels_dir=out_dir, total=len(tasks))
    logger.info(
        "Pseudo-labeling %d pairs from %s with teacher '%s' (%d worker%s)",
        len(tasks), split_dir, kind.value, parallelism, "" if parallelism == 1 else "s",
    )

    def collect(results):
        for done, (index, payload, error, wall_ms) in enumerate(results, start=1):
            summary.wall_time_ms[index] = wall_ms
            if error is not None:
                logger.warning("Pair %06d failed: %s", index, error)
                summary.failures[index] = error
            else:
                label_path(out_dir, index).write_bytes(
                    _strip_wall_time(payload) if deterministic else payload
                )
                summary.written.append(index)
            if on_progress is not None:
                on_progress(done, len(tasks))

    if parallelism == 1 or len(tasks) <= 1:
        collect(map(_label_task, tasks))
    else:
        with ProcessPoolExecutor(max_workers=parallelism) as executor:
            collect(executor.map(_label_task, tasks, chunksize=1))

    manifest = {
        "teacher": kind.value,
        "split": split,
        "global_seed": global_seed,
        "total": summary.total,
        "written": len(summary.written),
        "failures": [{"index": i, "error": summary.failures[i]} for i in sorted(summary.failures)],
        "tool_version": settings.TOOL_VERSION,
    }
    (out_dir / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    timings = {f"{i:06d}": summary.wall_time_ms[i] for i in sorted(summary.wall_time_ms)}
    (out_dir / TIMINGS_NAME).write_text(json.dumps(timings, indent=2, sort_keys=True))

    if summary.failures:
        logger.warning(
            "%d of %d pairs failed (%.2f%%); see %s",
            len(summary.failures), summary.total, 100 * summary.failure_fraction, out_dir / MANIFEST_NAME,
        )
    else:
        logger.info("Wrote %d label files to %s", len(summary.written), out_dir)
    return summary


def failed_indices(labels_dir: PathLike) -> Set[int]:
    """Pairs recorded as failed in the labels directory's manifest; empty without a manifest."""
    path = Path(labels_dir) / MANIFEST_NAME
    if not path.exists():
        return set()
    try:
        return {int(entry["index"]) for entry in json.loads(path.read_text())["failures"]}
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed label manifest ({exc})") from exc


def load_labels(labels_dir: PathLike, indices: List[int]) -> Dict[int, PseudoLabel]:
    """Load the labels of the given pairs; a missing file is a hard error."""
    labels_dir = Path(labels_dir)
    missing = [i for i in indices if not label_path(labels_dir, i).exists()]
    if missing:
        preview = ", ".join(f"{i:06d}" for i in missing[:5])
        raise FileNotFoundError(
            f"{len(missing)} label file(s) missing in {labels_dir} (first: {preview})"
        )
    return {i: load_label(label_path(labels_dir, i)) for i in indices}
