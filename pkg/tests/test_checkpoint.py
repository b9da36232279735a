"""Tests for the binary checkpoint format."""

from __future__ import annotations

import struct

import numpy as np
import pytest

from segnet.src.arraycore import Module
from segnet.src.checkpoint import (
    FORMAT_VERSION,
    MAGIC,
    CheckpointError,
    decode_checkpoint,
    encode_checkpoint,
    read_checkpoint,
    restore_parameters,
    save_checkpoint,
)


class _Tiny(Module):
    def __init__(self, width: int = 3, fill: float = 0.0) -> None:
        super().__init__("tiny")
        self.w = self.add_parameter("w", np.full((2, width), fill))
        self.b = self.add_parameter("b", np.arange(width, dtype=float))


class TestCheckpointRoundTrip:
    """Save, read and restore."""

    def test_round_trip_restores_values(self, tmp_path):
        """Test that restored parameters equal the saved ones."""
        source = _Tiny(fill=0.25)
        path = tmp_path / "runs" / "tiny.ckpt"
        save_checkpoint(path, {"d_model": 4, "precision": "float32"}, source)

        checkpoint = read_checkpoint(path)
        target = _Tiny(fill=9.0)
        restore_parameters(target, checkpoint)

        assert checkpoint.version == FORMAT_VERSION
        assert checkpoint.config == {"d_model": 4, "precision": "float32"}
        assert [name for name, _ in checkpoint.tensors] == ["tiny.w", "tiny.b"]
        assert np.allclose(target.w.values, 0.25)
        assert np.allclose(target.b.values, [0.0, 1.0, 2.0])

    def test_header_layout(self):
        """Test that the file starts with the magic tag and version."""
        data = encode_checkpoint({}, _Tiny())
        assert data[: len(MAGIC)] == MAGIC
        assert struct.unpack("<I", data[len(MAGIC) : len(MAGIC) + 4]) == (FORMAT_VERSION,)


class TestCheckpointErrors:
    """Corrupt or mismatched checkpoints."""

    def test_bad_magic(self):
        """Test that foreign bytes are rejected."""
        with pytest.raises(CheckpointError) as exc_info:
            decode_checkpoint(b"NOTACKPT" + b"\x00" * 16)

        assert "bad magic" in str(exc_info.value)

    def test_unknown_version(self):
        """Test that a newer format version is named."""
        data = bytearray(encode_checkpoint({}, _Tiny()))
        data[len(MAGIC) : len(MAGIC) + 4] = struct.pack("<I", 99)
        with pytest.raises(CheckpointError) as exc_info:
            decode_checkpoint(bytes(data))

        assert "version 99" in str(exc_info.value)

    def test_truncated(self):
        """Test that a cut file is reported as truncated."""
        data = encode_checkpoint({}, _Tiny())
        with pytest.raises(CheckpointError) as exc_info:
            decode_checkpoint(data[:-3])

        assert "Truncated" in str(exc_info.value)

    def test_trailing_bytes(self):
        """Test that extra bytes after the last tensor are rejected."""
        data = encode_checkpoint({}, _Tiny())
        with pytest.raises(CheckpointError) as exc_info:
            decode_checkpoint(data + b"\x00")

        assert "Trailing bytes" in str(exc_info.value)

    def test_missing_file(self, tmp_path):
        """Test that an unreadable path becomes a checkpoint error."""
        with pytest.raises(CheckpointError) as exc_info:
            read_checkpoint(tmp_path / "absent.ckpt")

        assert "Cannot read checkpoint" in str(exc_info.value)

    def test_shape_mismatch_on_restore(self, caplog):
        """Test that restoring into a differently sized model fails loudly."""
        checkpoint = decode_checkpoint(encode_checkpoint({}, _Tiny(width=3)))
        with pytest.raises(CheckpointError) as exc_info:
            restore_parameters(_Tiny(width=4), checkpoint)

        assert "Shape mismatch" in str(exc_info.value)
        assert "[CHECKPOINT_ERROR]" in caplog.text
