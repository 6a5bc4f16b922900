"""Binary checkpoint format.

Layout (all integers little-endian uint32 unless noted):

    magic          8 bytes, b"CASCKPT1"
    version        uint32 (currently 1)
    config_len     uint32, then config_len bytes of UTF-8 experiment config
    epoch          uint32
    n_params       uint32
    per parameter, in canonical (insertion) order:
        name_len   uint32, then name_len bytes of UTF-8 name
        rank       uint32
        dims       rank x uint32
        values     prod(dims) x float32 little-endian

Loading validates magic, version, exact payload length and, via the
embedded config, the expected parameter names and shapes; each failure
mode raises a distinct error category.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import (CheckpointError, CheckpointMagicError, CheckpointShapeError,
                     CheckpointTruncatedError, CheckpointVersionError)
from .model import Parameters, Tensor, expected_param_shapes

MAGIC = b"CASCKPT1"
VERSION = 1


def save_checkpoint(path, config_text: str, epoch: int, params: Parameters):
    """Write parameters (cast to float32) with the config text embedded."""
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", VERSION)
    cfg = config_text.encode("utf-8")
    out += struct.pack("<I", len(cfg))
    out += cfg
    out += struct.pack("<I", int(epoch))
    out += struct.pack("<I", len(params))
    for name, t in params.items():
        nb = name.encode("utf-8")
        out += struct.pack("<I", len(nb))
        out += nb
        out += struct.pack("<I", t.ndim)
        out += struct.pack(f"<{t.ndim}I", *t.shape)
        out += np.ascontiguousarray(t.data, dtype="<f4").tobytes()
    Path(path).write_bytes(bytes(out))


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointTruncatedError(
                f"checkpoint truncated: needed {n} bytes at offset {self.pos}, "
                f"file has {len(self.raw)}")
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path):
    """Read a checkpoint; returns (config_text, epoch, Parameters)."""
    r = _Reader(Path(path).read_bytes())
    magic = r.take(len(MAGIC))
    if magic != MAGIC:
        raise CheckpointMagicError(f"bad checkpoint magic {magic!r}")
    version = r.u32()
    if version != VERSION:
        raise CheckpointVersionError(f"unsupported checkpoint version {version}")
    config_text = r.take(r.u32()).decode("utf-8")
    epoch = r.u32()
    n_params = r.u32()
    params = Parameters()
    for _ in range(n_params):
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank))
        count = 1
        for d in dims:
            count *= d
        values = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(dims)
        params.add(name, Tensor(values.astype(np.float32), requires_grad=True))
    if r.pos != len(r.raw):
        raise CheckpointError(f"{len(r.raw) - r.pos} trailing bytes after checkpoint payload")
    _validate_shapes(config_text, params)
    return config_text, epoch, params


def _validate_shapes(config_text: str, params: Parameters):
    from .config import ExperimentConfig  # local import to avoid a cycle

    try:
        cfg = ExperimentConfig.from_json(config_text)
    except Exception as e:
        raise CheckpointError(f"embedded config unreadable: {e}") from e
    expected = expected_param_shapes(cfg.model)
    names = params.names()
    if set(names) != set(expected):
        missing = sorted(set(expected) - set(names))
        extra = sorted(set(names) - set(expected))
        raise CheckpointShapeError(
            f"parameter names do not match config (missing={missing}, extra={extra})")
    for name, t in params.items():
        if t.shape != expected[name]:
            raise CheckpointShapeError(
                f"{name}: stored shape {t.shape} != config shape {expected[name]}")
