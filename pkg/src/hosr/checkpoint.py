"""Versioned binary checkpoints.

Layout (all little-endian):
    magic  b"HOSR"
    u16    format version
    u8     model code (0 hosr, 1 bpr, 2 trustsvd)
    u8     attention code (index into ATTENTION_MODES)
    u8     decay code (index into DECAY_VARIANTS)
    u8     padding
    u64 x4 n, m, d, k   (k = 0 for baselines)
    f64    tensors in declaration order, row-major
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .baselines import BaselineParams
from .model import ATTENTION_MODES, DECAY_VARIANTS, ModelParams

MAGIC = b"HOSR"
VERSION = 1
MODEL_CODES = ("hosr", "bpr", "trustsvd")
_HEADER = struct.Struct("<4sHBBBx4Q")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model: str
    params: ModelParams | BaselineParams
    attention: str = "attention"
    decay: str = "user"

    @property
    def shape(self) -> tuple[int, int, int, int]:
        p = self.params
        k = p.k if self.model == "hosr" else 0
        return p.U.shape[0], p.V.shape[0], p.U.shape[1], k


def _shapes(model, n, m, d, k):
    if model == "hosr":
        return ([("U", (n, d)), ("V", (m, d))] + [(f"W{i}", (d, d)) for i in range(1, k + 1)]
                + [("P_u", (d, d)), ("P_o", (d, d)), ("h", (d,))])
    out = [("U", (n, d)), ("V", (m, d))]
    if model == "trustsvd":
        out += [("Q", (m, d)), ("Wt", (n, d))]
    return out


def to_bytes(ckpt: Checkpoint) -> bytes:
    n, m, d, k = ckpt.shape
    header = _HEADER.pack(MAGIC, VERSION, MODEL_CODES.index(ckpt.model),
                          ATTENTION_MODES.index(ckpt.attention),
                          DECAY_VARIANTS.index(ckpt.decay), n, m, d, k)
    tensors = ckpt.params.tensors()
    body = b"".join(np.ascontiguousarray(tensors[name], dtype="<f8").tobytes()
                    for name, _ in _shapes(ckpt.model, n, m, d, k))
    return header + body


def from_bytes(blob: bytes) -> Checkpoint:
    if len(blob) < _HEADER.size:
        raise CheckpointError("file too short for a checkpoint header")
    magic, version, mcode, acode, dcode, n, m, d, k = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic bytes)")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        model = MODEL_CODES[mcode]
        attention = ATTENTION_MODES[acode]
        decay = DECAY_VARIANTS[dcode]
    except IndexError:
        raise CheckpointError("corrupt checkpoint header") from None
    shapes = _shapes(model, n, m, d, k)
    need = _HEADER.size + 8 * sum(int(np.prod(s)) for _, s in shapes)
    if len(blob) != need:
        raise CheckpointError(f"checkpoint size {len(blob)} does not match header ({need} bytes)")
    tensors, off = {}, _HEADER.size
    for name, shape in shapes:
        count = int(np.prod(shape))
        tensors[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=off).astype(np.float64).reshape(shape)
        off += 8 * count
    if model == "hosr":
        params = ModelParams.from_tensors(tensors)
    else:
        params = BaselineParams.from_tensors(model, tensors)
    return Checkpoint(model, params, attention, decay)


def save(ckpt: Checkpoint, path):
    with open(path, "wb") as f:
        f.write(to_bytes(ckpt))


def load(path) -> Checkpoint:
    with open(path, "rb") as f:
        return from_bytes(f.read())
