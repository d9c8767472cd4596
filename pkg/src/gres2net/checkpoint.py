"""Versioned binary checkpoints.

Layout, all integers little-endian:

    magic      4 bytes  b"GR2N"
    version    u32
    header     u64 byte length, then canonical JSON (sorted keys, no spaces)
               holding the model topology and the training-state snapshot
    count      u32 number of arrays
    per array  u16 name length + UTF-8 name, u8 rank, rank x u64 dims,
               then float64 data, little-endian, row-major

Canonical JSON plus a fixed array order makes save -> load -> save
byte-identical, and float64 arrays round-trip bit-exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import DataError

__all__ = ["Checkpoint", "save_checkpoint", "load_checkpoint"]

MAGIC = b"GR2N"
VERSION = 1


@dataclass
class Checkpoint:
    """Everything needed to rebuild a model and resume its training run:
    topology, parameter and optimizer-moment arrays, normalization statistics,
    epoch counter, best validation metric, and the generator state."""

    topology: dict
    state: dict
    arrays: dict[str, np.ndarray] = field(default_factory=dict)


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    header = json.dumps(
        {"topology": ckpt.topology, "state": ckpt.state},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    chunks = [MAGIC, struct.pack("<I", VERSION), struct.pack("<Q", len(header)), header]
    chunks.append(struct.pack("<I", len(ckpt.arrays)))
    for name, arr in ckpt.arrays.items():
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, blob: bytes, source: str):
        self.blob = blob
        self.pos = 0
        self.source = source

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise DataError(f"checkpoint {self.source} is truncated or corrupt")
        piece = self.blob[self.pos : self.pos + n]
        self.pos += n
        return piece

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint file not found: {path}")
    reader = _Reader(path.read_bytes(), str(path))
    if reader.take(4) != MAGIC:
        raise DataError(f"checkpoint {path} has wrong magic bytes")
    (version,) = reader.unpack("<I")
    if version != VERSION:
        raise DataError(f"checkpoint {path} has unsupported format version {version}")
    (header_len,) = reader.unpack("<Q")
    try:
        header = json.loads(reader.take(header_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"checkpoint {path} header is corrupt: {exc}") from None
    (count,) = reader.unpack("<I")
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        (ndim,) = reader.unpack("<B")
        shape = reader.unpack(f"<{ndim}Q") if ndim else ()
        n_values = int(np.prod(shape, dtype=np.int64)) if shape else 1
        raw = reader.take(8 * n_values)
        arrays[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
    if reader.pos != len(reader.blob):
        raise DataError(f"checkpoint {path} has {len(reader.blob) - reader.pos} trailing bytes")
    return Checkpoint(topology=header["topology"], state=header["state"], arrays=arrays)
