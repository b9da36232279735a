"""Binary checkpoint codec.

Layout (all integers little-endian)::

    magic    8 bytes  b"SEGNETCK"
    version  uint32
    config   uint32 length + UTF-8 JSON (sorted keys)
    count    uint32
    per parameter, in model order:
        name   uint16 length + UTF-8
        ndim   uint8, then ndim x uint32 dims
        values float32 little-endian, row-major
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Tuple

import numpy as np

from .arraycore import ContractError, Module

logger = logging.getLogger(__name__)

CHECKPOINT_ERROR = "CHECKPOINT_ERROR"

MAGIC = b"SEGNETCK"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    """Raised when a checkpoint cannot be read or does not fit the model."""


@dataclass(frozen=True)
class Checkpoint:
    """Decoded checkpoint contents."""

    version: int
    config: Dict[str, Any]
    tensors: List[Tuple[str, np.ndarray]]

    def state(self) -> Dict[str, np.ndarray]:
        return dict(self.tensors)


def encode_checkpoint(config: Mapping[str, Any], module: Module) -> bytes:
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    config_bytes = json.dumps(dict(config), sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<I", len(config_bytes)))
    parts.append(config_bytes)
    named = module.named_parameters()
    parts.append(struct.pack("<I", len(named)))
    for name, param in named.items():
        name_bytes = name.encode("utf-8")
        parts.append(struct.pack("<H", len(name_bytes)))
        parts.append(name_bytes)
        parts.append(struct.pack("<B", param.ndim))
        parts.append(struct.pack(f"<{param.ndim}I", *param.shape))
        parts.append(np.ascontiguousarray(param.values, dtype="<f4").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes) -> None:
        self._data = data
        self._pos = 0

    def take(self, count: int) -> bytes:
        end = self._pos + count
        if end > len(self._data):
            raise CheckpointError(
                f"Truncated checkpoint: wanted {count} bytes at offset {self._pos}"
            )
        chunk = self._data[self._pos : end]
        self._pos = end
        return chunk

    def unpack(self, fmt: str) -> Tuple[Any, ...]:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    @property
    def exhausted(self) -> bool:
        return self._pos == len(self._data)


def decode_checkpoint(data: bytes) -> Checkpoint:
    """Parse checkpoint bytes.

    Raises:
        CheckpointError: On a bad magic tag, unknown version or truncation.
    """
    reader = _Reader(data)
    if reader.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("Not a checkpoint file (bad magic tag)")
    (version,) = reader.unpack("<I")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"Unsupported checkpoint version {version} (expected {FORMAT_VERSION})"
        )
    (config_len,) = reader.unpack("<I")
    try:
        config = json.loads(reader.take(config_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"Malformed checkpoint config: {exc}") from exc
    (count,) = reader.unpack("<I")
    tensors: List[Tuple[str, np.ndarray]] = []
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        (ndim,) = reader.unpack("<B")
        shape = reader.unpack(f"<{ndim}I") if ndim else ()
        size = int(np.prod(shape)) if shape else 1
        values = np.frombuffer(reader.take(4 * size), dtype="<f4").reshape(shape)
        tensors.append((name, values.copy()))
    if not reader.exhausted:
        raise CheckpointError("Trailing bytes after the last parameter")
    return Checkpoint(version=version, config=config, tensors=tensors)


def save_checkpoint(path: Path, config: Mapping[str, Any], module: Module) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(config, module))
    logger.info("Checkpoint written: %s", path)


def read_checkpoint(path: Path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"Cannot read checkpoint {path}: {exc}") from exc
    return decode_checkpoint(data)


def restore_parameters(module: Module, checkpoint: Checkpoint) -> None:
    """Load checkpoint tensors into ``module``.

    Raises:
        CheckpointError: If names or shapes do not match the module.
    """
    try:
        module.load_state_dict(checkpoint.state())
    except ContractError as exc:
        logger.error("[%s] %s", CHECKPOINT_ERROR, exc)
        raise CheckpointError(str(exc)) from exc
