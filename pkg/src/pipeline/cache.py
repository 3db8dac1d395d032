"""
Content-addressed stage cache.

Each completed stage lives in ``<root>/<stage>/<hash>/`` with a ``stage.json`` record
holding the SHA-256 of every file it produced. A stage directory without a record is
treated as incomplete and rebuilt; a recorded file whose checksum changed raises
``CacheCorruptionError``.
"""

import hashlib
import json
import logging
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

from src.config import settings
from src.core.errors import CacheCorruptionError

logger = logging.getLogger(__name__)

RECORD_NAME = "stage.json"


def file_sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def directory_checksums(directory: Path) -> Dict[str, str]:
    """Checksums of every file below ``directory`` keyed by POSIX relative path."""
    return {
        path.relative_to(directory).as_posix(): file_sha256(path)
        for path in sorted(directory.rglob("*"))
        if path.is_file() and path.name != RECORD_NAME
    }


@dataclass
class StageRecord:
    stage: str
    stage_hash: str
    wall_time_s: float
    checksums: Dict[str, str]
    extra: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "stage": self.stage,
            "stage_hash": self.stage_hash,
            "wall_time_s": self.wall_time_s,
            "checksums": self.checksums,
            "extra": self.extra,
            "tool_version": settings.TOOL_VERSION,
        }


class StageCache:
    def __init__(self, root: Optional[Union[str, Path]] = None):
        self.root = Path(root) if root is not None else settings.CACHE_DIR

    def stage_dir(self, stage: str, stage_hash: str) -> Path:
        return self.root / stage / stage_hash

    def lookup(self, stage: str, stage_hash: str) -> Optional[StageRecord]:
        """Verified record of a completed stage, or ``None`` on a miss."""
        directory = self.stage_dir(stage, stage_hash)
        record_path = directory / RECORD_NAME
        if not record_path.exists():
            return None
        data = json.loads(record_path.read_text())
        record = StageRecord(
            stage=data["stage"],
            stage_hash=data["stage_hash"],
            wall_time_s=data["wall_time_s"],
            checksums=data["checksums"],
            extra=data.get("extra", {}),
        )
        self.verify(record)
        logger.info("Cache hit for stage '%s' (%s)", stage, stage_hash[:12])
        return record

    def verify(self, record: StageRecord) -> None:
        directory = self.stage_dir(record.stage, record.stage_hash)
        for name, expected in sorted(record.checksums.items()):
            path = directory / name
            if not path.exists():
                raise CacheCorruptionError(f"cached file missing for stage '{record.stage}': {path}")
            actual = file_sha256(path)
            if actual != expected:
                raise CacheCorruptionError(
                    f"checksum mismatch for stage '{record.stage}' file {path}: "
                    f"expected {expected[:12]}, found {actual[:12]}"
                )

    def prepare(self, stage: str, stage_hash: str) -> Path:
        """Empty directory for a stage about to be (re)built."""
        directory = self.stage_dir(stage, stage_hash)
        if directory.exists():
            shutil.rmtree(directory)
        directory.mkdir(parents=True)
        return directory

    def commit(self, stage: str, stage_hash: str, wall_time_s: float, extra: Dict[str, Any] = None) -> StageRecord:
        directory = self.stage_dir(stage, stage_hash)
        record = StageRecord(
            stage=stage,
            stage_hash=stage_hash,
            wall_time_s=round(wall_time_s, 3),
            checksums=directory_checksums(directory),
            extra=extra or {},
        )
        (directory / RECORD_NAME).write_text(json.dumps(record.to_dict(), indent=2, sort_keys=True))
        return record
