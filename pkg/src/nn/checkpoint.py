"""
Named-parameter checkpoint files (``ZFCK``).

Layout (little-endian): magic ``ZFCK``, version u32, entry count u32, then per entry:
name length u32, UTF-8 name, ndim u32, dims u32[ndim], f64 values.
"""

import struct
from collections import OrderedDict
from pathlib import Path
from typing import Dict, Union

import numpy as np

from src.config import settings
from src.core.errors import FormatError

_U32 = struct.Struct("<I")


def encode_checkpoint(state: Dict[str, np.ndarray]) -> bytes:
    chunks = [settings.CHECKPOINT_MAGIC, _U32.pack(settings.CHECKPOINT_VERSION), _U32.pack(len(state))]
    for name, values in state.items():
        encoded = name.encode("utf-8")
        values = np.asarray(values, dtype="<f8")
        chunks.append(_U32.pack(len(encoded)))
        chunks.append(encoded)
        chunks.append(_U32.pack(values.ndim))
        chunks.extend(_U32.pack(dim) for dim in values.shape)
        chunks.append(values.tobytes())
    return b"".join(chunks)


def decode_checkpoint(payload: bytes) -> "OrderedDict[str, np.ndarray]":
    if payload[:4] != settings.CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic {payload[:4]!r}")
    offset = 4

    def read_u32() -> int:
        nonlocal offset
        if offset + 4 > len(payload):
            raise FormatError("checkpoint truncated")
        (value,) = _U32.unpack_from(payload, offset)
        offset += 4
        return value

    version = read_u32()
    if version != settings.CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    state = OrderedDict()
    for _ in range(read_u32()):
        name_len = read_u32()
        if offset + name_len > len(payload):
            raise FormatError("checkpoint truncated inside a parameter name")
        try:
            name = payload[offset:offset + name_len].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"parameter name at byte {offset} is not valid UTF-8") from exc
        offset += name_len
        shape = tuple(read_u32() for _ in range(read_u32()))
        count = int(np.prod(shape)) if shape else 1
        if offset + 8 * count > len(payload):
            raise FormatError(f"checkpoint truncated inside parameter {name}")
        state[name] = np.frombuffer(payload, dtype="<f8", count=count, offset=offset).reshape(shape).astype(np.float64)
        offset += 8 * count
    if offset != len(payload):
        raise FormatError(f"{len(payload) - offset} trailing bytes after checkpoint entries")
    return state


def save_checkpoint(state: Dict[str, np.ndarray], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(state))
    return path


def load_checkpoint(path: Union[str, Path]) -> "OrderedDict[str, np.ndarray]":
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    try:
        return decode_checkpoint(path.read_bytes())
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from exc
