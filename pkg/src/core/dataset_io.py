"""
On-disk dataset layout and the ``ZFSS`` frame-pair format.

Layout::

    <root>/<split>/<index:06>.zfss   binary frame pair
    <root>/<split>/<index:06>.json   SceneConfig + generator meta

Binary layout (little-endian): magic ``ZFSS``, version u32, n_t u32, n_t1 u32,
frame_id_t i64, frame_id_t1 i64, dt f64, then cloud_t f32[n_t,3], cloud_t1 f32[n_t1,3],
gt_flow f32[n_t,3], classes u8[n_t].
"""

import json
import struct
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np

from src.config import settings
from src.core.errors import FormatError
from src.core.types import FlowField, PointCloud, SceneConfig, SceneSample

_HEADER = struct.Struct("<4sIIIqqd")
SAMPLE_SUFFIX = ".zfss"
SIDECAR_SUFFIX = ".json"

PathLike = Union[str, Path]


def sample_stem(split_dir: PathLike, index: int) -> Path:
    return Path(split_dir) / f"{index:06d}"


def encode_sample(sample: SceneSample) -> bytes:
    header = _HEADER.pack(
        settings.SCENE_MAGIC,
        settings.SCENE_VERSION,
        len(sample.cloud_t),
        len(sample.cloud_t1),
        sample.cloud_t.frame_id,
        sample.cloud_t1.frame_id,
        sample.dt_seconds,
    )
    return b"".join([
        header,
        sample.cloud_t.points.astype("<f4").tobytes(),
        sample.cloud_t1.points.astype("<f4").tobytes(),
        sample.gt_flow.vectors.astype("<f4").tobytes(),
        sample.classes.astype(np.uint8).tobytes(),
    ])


def decode_sample(payload: bytes, meta: Optional[Dict[str, Any]] = None) -> SceneSample:
    if len(payload) < _HEADER.size:
        raise FormatError("frame-pair file is shorter than its header")
    magic, version, n_t, n_t1, frame_t, frame_t1, dt = _HEADER.unpack_from(payload)
    if magic != settings.SCENE_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {settings.SCENE_MAGIC!r}")
    if version != settings.SCENE_VERSION:
        raise FormatError(f"unsupported frame-pair version {version}")
    expected = _HEADER.size + 12 * n_t + 12 * n_t1 + 12 * n_t + n_t
    if len(payload) != expected:
        raise FormatError(f"frame-pair file has {len(payload)} bytes, expected {expected}")

    offset = _HEADER.size

    def take(count: int, dtype: str, width: int) -> np.ndarray:
        nonlocal offset
        array = np.frombuffer(payload, dtype=dtype, count=count * width, offset=offset)
        offset += array.nbytes
        return array.reshape(count, width) if width > 1 else array

    cloud_t = take(n_t, "<f4", 3).astype(np.float64)
    cloud_t1 = take(n_t1, "<f4", 3).astype(np.float64)
    flow = take(n_t, "<f4", 3).astype(np.float64)
    classes = take(n_t, "u1", 1).copy()
    return SceneSample(
        cloud_t=PointCloud(cloud_t, frame_t),
        cloud_t1=PointCloud(cloud_t1, frame_t1),
        gt_flow=FlowField(flow),
        classes=classes,
        dt_seconds=dt,
        meta=meta or {},
    )


def save_sample(sample: SceneSample, stem: PathLike, config: Optional[SceneConfig] = None) -> Path:
    """
    Write a frame pair and its JSON sidecar.

    Args:
        sample: Frame pair to store
        stem: Path without suffix, e.g. ``dataset/train/000003``
        config: Generator configuration recorded in the sidecar

    Returns:
        Path of the binary file
    """
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    binary_path = stem.with_suffix(SAMPLE_SUFFIX)
    binary_path.write_bytes(encode_sample(sample))
    sidecar = {
        "config": config.model_dump(mode="json") if config is not None else None,
        "meta": sample.meta,
    }
    stem.with_suffix(SIDECAR_SUFFIX).write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    return binary_path


def load_sample(path: PathLike) -> SceneSample:
    path = Path(path)
    if path.suffix != SAMPLE_SUFFIX:
        path = path.with_suffix(SAMPLE_SUFFIX)
    if not path.exists():
        raise FileNotFoundError(f"frame-pair file not found: {path}")
    sidecar_path = path.with_suffix(SIDECAR_SUFFIX)
    meta = {}
    if sidecar_path.exists():
        meta = json.loads(sidecar_path.read_text()).get("meta") or {}
    try:
        return decode_sample(path.read_bytes(), meta)
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def load_sidecar(path: PathLike) -> Dict[str, Any]:
    return json.loads(Path(path).with_suffix(SIDECAR_SUFFIX).read_text())


def list_sample_indices(split_dir: PathLike) -> List[int]:
    split_dir = Path(split_dir)
    if not split_dir.is_dir():
        raise FileNotFoundError(f"dataset split directory not found: {split_dir}")
    return sorted(int(p.stem) for p in split_dir.glob(f"*{SAMPLE_SUFFIX}"))


def load_split(split_dir: PathLike, limit: Optional[int] = None) -> List[SceneSample]:
    indices = list_sample_indices(split_dir)
    if limit is not None:
        indices = indices[:limit]
    return [load_sample(sample_stem(split_dir, index)) for index in indices]
