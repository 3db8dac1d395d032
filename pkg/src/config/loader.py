"""
JSON config files.

Every file carries ``"version": 1`` at the top level next to the fields of the config
model it describes. Unknown keys, a missing or unsupported version, malformed JSON and
invalid values all raise ``ConfigError`` naming the file and the offending field.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Type, TypeVar, Union

from pydantic import BaseModel, ValidationError

from src.config import settings
from src.core.errors import ConfigError

logger = logging.getLogger(__name__)

VERSION_KEY = "version"

ModelT = TypeVar("ModelT", bound=BaseModel)


def read_config_payload(path: Union[str, Path]) -> Dict[str, Any]:
    """Parse ``path`` and strip the version field after checking it."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{path}: config file not found")
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(payload, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    if VERSION_KEY not in payload:
        raise ConfigError(f"{path}: missing '{VERSION_KEY}' field")
    version = payload.pop(VERSION_KEY)
    if version != settings.CONFIG_VERSION:
        raise ConfigError(f"{path}: unsupported config version {version!r} (expected {settings.CONFIG_VERSION})")
    return payload


def _describe(exc: ValidationError) -> str:
    parts = []
    for error in exc.errors():
        where = ".".join(str(p) for p in error["loc"]) or "<root>"
        if error["type"] == "extra_forbidden":
            parts.append(f"unknown key '{where}'")
        else:
            parts.append(f"field '{where}': {error['msg']}")
    return "; ".join(parts)


def load_config(path: Union[str, Path], model_cls: Type[ModelT], **overrides) -> ModelT:
    """
    Load one config file into ``model_cls``.

    Args:
        path: JSON config file
        model_cls: Pydantic model the file describes
        **overrides: Values that replace file fields (e.g. ``seed`` from the command line)

    Returns:
        Validated config instance

    Raises:
        ConfigError: on any problem with the file
    """
    payload = read_config_payload(path)
    payload.update({k: v for k, v in overrides.items() if v is not None})
    try:
        config = model_cls.model_validate(payload)
    except ValidationError as exc:
        raise ConfigError(f"{path}: {_describe(exc)}") from exc
    logger.debug("Loaded %s from %s", model_cls.__name__, path)
    return config


def dump_config(config: BaseModel, path: Union[str, Path]) -> Path:
    """Write ``config`` in the versioned file format ``load_config`` reads."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {VERSION_KEY: settings.CONFIG_VERSION, **config.model_dump(mode="json", exclude_none=True)}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True))
    return path
