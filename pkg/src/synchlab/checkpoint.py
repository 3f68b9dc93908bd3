"""Versioned binary checkpoints: named parameter tensors plus metadata.

Layout (all integers little-endian):

    magic    8 bytes  b"AVSYNCKP"
    version  u32      currently 1; unknown versions are refused
    meta_len u32      UTF-8 JSON metadata (stage, step, config_hash, ...)
    n_params u32
    per parameter:
        name_len u16, name bytes (UTF-8)
        dtype    u8   0 = float32, 1 = float64
        rank     u8
        extents  rank x u32
        payload  raw little-endian values, row-major
"""

from __future__ import annotations

import json
import struct
import warnings
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .nn import Module

MAGIC = b"AVSYNCKP"
VERSION = 1
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def save_checkpoint(model: Module, path: Path, meta: dict | None = None) -> None:
    meta_blob = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    params = list(model.named_parameters())
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(meta_blob)))
        fh.write(meta_blob)
        fh.write(struct.pack("<I", len(params)))
        for name, p in params:
            data = p.data
            code = _DTYPE_CODES.get(np.dtype(data.dtype))
            if code is None:
                raise CheckpointError(f"parameter {name} has unsupported dtype {data.dtype}")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<BB", code, data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(np.ascontiguousarray(data, dtype=_CODE_DTYPES[code]).tobytes())


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path: Path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob, path)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"{path}: unknown checkpoint version {version} (supported: {VERSION})")
    meta = json.loads(r.take(r.u32()).decode("utf-8"))
    n_params = r.u32()
    params: dict[str, np.ndarray] = {}
    for _ in range(n_params):
        name_len = struct.unpack("<H", r.take(2))[0]
        name = r.take(name_len).decode("utf-8")
        code, rank = struct.unpack("<BB", r.take(2))
        if code not in _CODE_DTYPES:
            raise CheckpointError(f"{path}: parameter {name} has unknown dtype code {code}")
        shape = struct.unpack(f"<{rank}I", r.take(4 * rank))
        dtype = _CODE_DTYPES[code]
        payload = r.take(int(np.prod(shape)) * dtype.itemsize)
        params[name] = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
    if r.pos != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - r.pos} trailing bytes after parameters")
    return meta, params


def load_into(model: Module, path: Path, expect_config_hash: str | None = None) -> dict:
    """Strict full restore; warns when the stored config hash differs."""
    meta, params = load_checkpoint(path)
    _warn_on_hash_mismatch(meta, expect_config_hash, path)
    model.load_state_dict(params, strict=True)
    return meta


def load_extractor_into(model: Module, path: Path,
                        expect_config_hash: str | None = None) -> dict:
    """Partial restore of the shared trunk (``extractor.*`` parameters).

    Used to initialize stage II from a stage-I checkpoint: extractor and
    aggregator weights are adopted, everything else keeps its fresh init.
    """
    meta, params = load_checkpoint(path)
    _warn_on_hash_mismatch(meta, expect_config_hash, path)
    subset = {k: v for k, v in params.items() if k.startswith("extractor.")}
    if not subset:
        raise CheckpointError(f"{path}: no extractor.* parameters to adopt")
    own = dict(model.named_parameters())
    missing = [k for k in subset if k not in own]
    if missing:
        raise CheckpointError(f"{path}: parameters not present in target model: {missing[:5]}")
    model.load_state_dict(subset, strict=False)
    return meta


def _warn_on_hash_mismatch(meta: dict, expected: str | None, path) -> None:
    if expected and meta.get("config_hash") and meta["config_hash"] != expected:
        warnings.warn(f"{path}: checkpoint config hash {meta['config_hash'][:12]} != "
                      f"current {expected[:12]}; resuming across configs", stacklevel=3)
