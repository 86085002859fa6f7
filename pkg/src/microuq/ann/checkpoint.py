"""MUQM checkpoint files: topology, standardizers, training metadata and f64 parameters.

Layout (little-endian):
    b"MUQM", u32 version, u32 grid_n, u32 n_numeric, u32 n_out
    per branch (voxel, numeric, trunk): u32 count, then per layer
        u8 kind code, u8 number of ints, i64 ints
    per Standardize layer in topology order: f64 mean[k], f64 std[k]
    u8 label transform code, f64 label scale, f64 y_mean[n_out], f64 y_std[n_out]
    u32 epochs, f64 best validation loss, u64 seed
    f64 parameter arrays in topology order (shapes follow from the topology)
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from ..errors import CorruptFile
from .layers import KIND_CODES, Standardize, layer_from_spec
from .network import LABEL_TRANSFORMS, Network, TrainingMeta

MAGIC = b"MUQM"
VERSION = 1
_KINDS = {code: name for name, code in KIND_CODES.items()}


def _f64(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def to_bytes(net: Network) -> bytes:
    out = io.BytesIO()
    out.write(MAGIC + struct.pack("<IIII", VERSION, net.grid_n, net.n_numeric, net.n_out))
    for _, layers in net.branches():
        out.write(struct.pack("<I", len(layers)))
        for layer in layers:
            ints = layer.spec()
            out.write(struct.pack("<BB", KIND_CODES[layer.kind], len(ints)))
            out.write(struct.pack(f"<{len(ints)}q", *ints))
    for layer in net.layers():
        if isinstance(layer, Standardize):
            out.write(_f64(layer.mean) + _f64(layer.std))
    out.write(struct.pack("<Bd", LABEL_TRANSFORMS.index(net.label_transform), net.label_scale))
    out.write(_f64(net.y_mean) + _f64(net.y_std))
    out.write(struct.pack("<IdQ", net.meta.epochs, net.meta.best_val_loss, net.meta.seed))
    for arr in net.parameters().values():
        out.write(_f64(arr))
    return out.getvalue()


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.buf):
            raise CorruptFile("checkpoint truncated")
        vals = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return vals

    def f64(self, shape) -> np.ndarray:
        count = int(np.prod(shape))
        if self.pos + 8 * count > len(self.buf):
            raise CorruptFile("checkpoint truncated")
        a = np.frombuffer(self.buf, dtype="<f8", count=count, offset=self.pos).reshape(shape)
        self.pos += 8 * count
        return a.astype(float)


def from_bytes(buf: bytes) -> Network:
    if buf[:4] != MAGIC:
        raise CorruptFile("bad checkpoint magic")
    r = _Reader(buf)
    r.pos = 4
    version, grid_n, n_numeric, n_out = r.unpack("<IIII")
    if version != VERSION:
        raise CorruptFile(f"unsupported checkpoint version {version}")
    branches = []
    for _ in range(3):
        (count,) = r.unpack("<I")
        layers = []
        for _ in range(count):
            code, k = r.unpack("<BB")
            if code not in _KINDS:
                raise CorruptFile(f"unknown layer code {code}")
            layers.append(layer_from_spec(_KINDS[code], r.unpack(f"<{k}q")))
        branches.append(layers)
    try:
        net = Network(*branches, grid_n=grid_n, n_numeric=n_numeric, n_out=n_out)
        net.build(None)
    except (ValueError, KeyError) as exc:
        raise CorruptFile(f"inconsistent topology: {exc}") from None
    for layer in net.layers():
        if isinstance(layer, Standardize):
            k = layer.mean.shape
            layer.mean = r.f64(k)
            layer.std = r.f64(k)
    code, scale = r.unpack("<Bd")
    if code >= len(LABEL_TRANSFORMS) or not scale > 0:
        raise CorruptFile("bad label transform")
    net.label_transform, net.label_scale = LABEL_TRANSFORMS[code], scale
    net.y_mean = r.f64((n_out,))
    net.y_std = r.f64((n_out,))
    epochs, best, seed = r.unpack("<IdQ")
    net.meta = TrainingMeta(epochs, best, seed)
    for layer in net.layers():
        for key, arr in layer.params.items():
            layer.params[key] = r.f64(arr.shape)
    if r.pos != len(buf):
        raise CorruptFile("trailing bytes in checkpoint")
    return net


def save(net: Network, path: str | Path) -> None:
    Path(path).write_bytes(to_bytes(net))


def load(path: str | Path) -> Network:
    return from_bytes(Path(path).read_bytes())

