"""FRLNET1 network checkpoint format.

All fields little-endian::

    magic        8 bytes   b"FRLNET1\\0"
    layers       u32       number of weight layers L
    per layer    u32 rows (fan_in), u32 cols (fan_out),
                 f64[rows*cols] weights row-major, f64[cols] biases
    has_adam     u8        0 or 1
    if has_adam: u64 step_count, f64 beta1, f64 beta2, f64 eps,
                 f64[P] first moment, f64[P] second moment
                 (P = parameter count, same order as the layer blocks)
"""

from __future__ import annotations

import io
import os
import struct

import numpy as np

from factored_rl.errors import MagicMismatch, TruncatedFile
from factored_rl.nn.mlp import NetParams
from factored_rl.nn.optim import AdamState

MAGIC = b"FRLNET1\0"


def to_bytes(params: NetParams, adam: AdamState | None = None) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", len(params.weights)))
    for w, b in zip(params.weights, params.biases):
        buf.write(struct.pack("<II", *w.shape))
        buf.write(w.astype("<f8").tobytes())
        buf.write(b.astype("<f8").tobytes())
    if adam is None:
        buf.write(b"\x00")
    else:
        buf.write(b"\x01")
        buf.write(struct.pack("<Qddd", adam.step_count, adam.beta1, adam.beta2, adam.eps))
        buf.write(adam.first_moment.flat.astype("<f8").tobytes())
        buf.write(adam.second_moment.flat.astype("<f8").tobytes())
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFile(f"checkpoint ends at byte {len(self.data)}, needed {self.pos + n}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64)


def from_bytes(data: bytes) -> tuple[NetParams, AdamState | None]:
    r = _Reader(data)
    if r.take(8) != MAGIC:
        raise MagicMismatch("not an FRLNET1 checkpoint")
    (layers,) = r.unpack("<I")
    sizes: list[int] = []
    chunks = []
    for _ in range(layers):
        rows, cols = r.unpack("<II")
        if sizes and sizes[-1] != rows:
            raise MagicMismatch(f"layer shapes do not chain ({sizes[-1]} -> {rows})")
        if not sizes:
            sizes.append(rows)
        sizes.append(cols)
        chunks.append(r.floats(rows * cols))
        chunks.append(r.floats(cols))
    params = NetParams(sizes, np.concatenate(chunks))
    (has_adam,) = r.unpack("<B")
    adam = None
    if has_adam:
        step, b1, b2, eps = r.unpack("<Qddd")
        n = params.flat.size
        m = NetParams(sizes, r.floats(n))
        v = NetParams(sizes, r.floats(n))
        adam = AdamState(m, v, int(step), b1, b2, eps)
    return params, adam


def save_net(path: str | os.PathLike, params: NetParams, adam: AdamState | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(params, adam))


def load_net(path: str | os.PathLike) -> tuple[NetParams, AdamState | None]:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
