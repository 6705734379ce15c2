""" The CMRT checkpoint container: a versioned list of named float32 tensors.

Layout (little-endian):
    magic "CMRT" | version u32 | count u32
    per entry: name length u16 | UTF-8 name | rank u8 | dims u64 × rank | values f32
"""
import struct
from pathlib import Path
from typing import Dict, Mapping

import numpy as np

from ..constants import CHECKPOINT_MAGIC, CHECKPOINT_VERSION
from ..errors import CheckpointError


def save_checkpoint(tensors: Mapping[str, np.ndarray], file: Path) -> None:
    """Safely write a checkpoint.

    The file is first written to a temporary file which then replaces ``file``; the
      temporary file is always cleaned up.
    """
    temporary_file = file.with_suffix(file.suffix + ".temp")
    try:
        with temporary_file.open("wb") as stream:
            stream.write(CHECKPOINT_MAGIC)
            stream.write(struct.pack("<II", CHECKPOINT_VERSION, len(tensors)))
            for name, values in tensors.items():
                encoded = name.encode("utf-8")
                array = np.ascontiguousarray(values, dtype="<f4")
                stream.write(struct.pack("<H", len(encoded)))
                stream.write(encoded)
                stream.write(struct.pack("<B", array.ndim))
                stream.write(struct.pack(f"<{array.ndim}Q", *array.shape))
                stream.write(array.tobytes())
        temporary_file.replace(file)
    finally:
        if temporary_file.exists():
            temporary_file.unlink()


def load_checkpoint(file: Path) -> Dict[str, np.ndarray]:
    """Read every tensor of a checkpoint, in file order.

    Raises:
        CheckpointError: If the file is missing, truncated, or not a CMRT container of
          a supported version.
    """
    try:
        payload = file.read_bytes()
    except OSError as error:
        raise CheckpointError(f"Cannot read checkpoint {file}: {error}") from error
    if payload[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"Not a checkpoint file (bad magic): {file}")
    reader = _Reader(payload, offset=4, file=file)
    version, count = reader.unpack("<II")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"Unsupported checkpoint version {version} in {file}; "
            f"Expected: {CHECKPOINT_VERSION}"
        )
    tensors: Dict[str, np.ndarray] = dict()
    for _ in range(count):
        (length,) = reader.unpack("<H")
        name = reader.take(length).decode("utf-8")
        (rank,) = reader.unpack("<B")
        shape = reader.unpack(f"<{rank}Q")
        size = int(np.prod(shape, dtype=np.int64))
        values = np.frombuffer(reader.take(4 * size), dtype="<f4").reshape(shape)
        tensors[name] = values.astype(np.float32)
    if reader.offset != len(payload):
        raise CheckpointError(f"Trailing bytes after {count} tensors in {file}")
    return tensors


class _Reader:
    """Cursor over the checkpoint bytes raising CheckpointError on truncation."""

    def __init__(self, payload: bytes, offset: int, file: Path):
        self.payload = payload
        self.offset = offset
        self.file = file

    def take(self, size: int) -> bytes:
        end = self.offset + size
        if end > len(self.payload):
            raise CheckpointError(f"Checkpoint is truncated: {self.file}")
        chunk, self.offset = self.payload[self.offset : end], end
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))
