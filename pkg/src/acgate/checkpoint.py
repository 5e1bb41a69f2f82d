"""Binary model checkpoints so audits can reload fitted models.

Layout (little-endian):
  magic  4 bytes  b"ACGM"
  u32    container version (currently 1)
  u16+utf8   model variant name
  u32+utf8   hyperparameter JSON blob
  u32    parameter count
  per parameter:
    u16+utf8   name
    u8         ndim
    u32 * ndim dims
    f64 * prod(dims)  row-major data
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"ACGM"
VERSION = 1


def _pack_str(text: str, width: str) -> bytes:
    raw = text.encode("utf-8")
    return struct.pack(f"<{width}", len(raw)) + raw


def save_checkpoint(path, variant: str, hyper: dict,
                    state: dict[str, np.ndarray]) -> None:
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    blob += _pack_str(variant, "H")
    blob += _pack_str(json.dumps(hyper, sort_keys=True), "I")
    blob += struct.pack("<I", len(state))
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name], dtype="<f8")
        blob += _pack_str(name, "H")
        blob += struct.pack("<B", arr.ndim)
        for dim in arr.shape:
            blob += struct.pack("<I", dim)
        blob += arr.tobytes()
    Path(path).write_bytes(bytes(blob))


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise DataError("truncated checkpoint file")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))[0]

    def string(self, width: str) -> str:
        return self.take(self.unpack(f"<{width}")).decode("utf-8")


def load_checkpoint(path) -> tuple[str, dict, dict[str, np.ndarray]]:
    """Returns (variant, hyperparameter dict, parameter arrays)."""
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != MAGIC:
        raise DataError(f"{path} is not a model checkpoint (bad magic)")
    version = r.unpack("<I")
    if version != VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    variant = r.string("H")
    hyper = json.loads(r.string("I"))
    count = r.unpack("<I")
    state: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = r.string("H")
        ndim = r.unpack("<B")
        shape = tuple(r.unpack("<I") for _ in range(ndim))
        n_items = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(r.take(8 * n_items), dtype="<f8").reshape(shape)
        state[name] = data.astype(np.float64)
    return variant, hyper, state
