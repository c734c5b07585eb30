"""Binary checkpoint format (``ICEP``).

Layout, all integers little-endian::

    b"ICEP"  u32 version
    u32 ndim, u32 * ndim            input shape
    u32 layer_count
    per layer:  u8 kind, u8 frozen, u8 prunable, u32 attr,
                u8 param_count, per param: u8 ndim, u32 * ndim shape
    float32 parameter payloads in declaration order
    per prunable layer: u32 structure_count, packed mask bits (LSB first)

``attr`` is the conv padding or the pool size, zero otherwise.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .netcore import Conv2d, Dense, Flatten, MaxPool2d, Network, ReLU

MAGIC = b"ICEP"
VERSION = 1

_KINDS = {"dense": 0, "conv2d": 1, "relu": 2, "maxpool2d": 3, "flatten": 4}
_PARAM_ORDER = ("weight", "bias")


class CheckpointError(ValueError):
    pass


def _attr(layer) -> int:
    if isinstance(layer, Conv2d):
        return layer.padding
    if isinstance(layer, MaxPool2d):
        return layer.size
    return 0


def dumps(net: Network) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    buf.write(struct.pack("<I", len(net.input_shape)))
    buf.write(struct.pack(f"<{len(net.input_shape)}I", *net.input_shape))
    buf.write(struct.pack("<I", len(net.layers)))
    for layer in net.layers:
        buf.write(struct.pack("<BBBI", _KINDS[layer.kind], layer.frozen, layer.prunable, _attr(layer)))
        names = [n for n in _PARAM_ORDER if n in layer.params]
        buf.write(struct.pack("<B", len(names)))
        for name in names:
            shape = layer.params[name].shape
            buf.write(struct.pack(f"<B{len(shape)}I", len(shape), *shape))
    for layer in net.layers:
        for name in _PARAM_ORDER:
            if name in layer.params:
                arr = layer.params[name]
                if arr.dtype != np.float32:
                    raise CheckpointError(f"checkpoints store float32 parameters, got {arr.dtype}")
                buf.write(arr.astype("<f4").tobytes())
    for i in net.prunable_indices:
        mask = net.masks[i]
        buf.write(struct.pack("<I", mask.size))
        buf.write(np.packbits(mask, bitorder="little").tobytes())
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(
                f"truncated checkpoint: need {n} bytes at offset {self.pos}, file has {len(self.data)}"
            )
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))


def loads(data: bytes) -> Network:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CheckpointError("not an ICEP checkpoint (bad magic at offset 0)")
    (version,) = r.unpack("I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    (ndim,) = r.unpack("I")
    input_shape = r.unpack(f"{ndim}I")
    (count,) = r.unpack("I")
    kinds = {v: k for k, v in _KINDS.items()}
    descs = []
    for _ in range(count):
        offset = r.pos
        code, frozen, prunable, attr = r.unpack("BBBI")
        if code not in kinds:
            raise CheckpointError(f"unknown layer kind {code} at offset {offset}")
        (nparams,) = r.unpack("B")
        shapes = []
        for _ in range(nparams):
            (d,) = r.unpack("B")
            shapes.append(r.unpack(f"{d}I"))
        descs.append((kinds[code], bool(frozen), bool(prunable), attr, shapes))

    layers = []
    for kind, frozen, prunable, attr, shapes in descs:
        if kind == "dense":
            layer = Dense(shapes[0][1], shapes[0][0], prunable=prunable)
        elif kind == "conv2d":
            f, c, kh, _ = shapes[0]
            layer = Conv2d(c, f, kh, padding=attr, prunable=prunable)
        elif kind == "relu":
            layer = ReLU()
        elif kind == "maxpool2d":
            layer = MaxPool2d(attr)
        else:
            layer = Flatten()
        layer.frozen = frozen
        for name, shape in zip(_PARAM_ORDER, shapes):
            size = int(np.prod(shape)) * 4
            arr = np.frombuffer(r.take(size), dtype="<f4").reshape(shape)
            layer.params[name] = arr.astype(np.float32)
        layers.append(layer)
    net = Network(layers, input_shape)
    for i in net.prunable_indices:
        (n,) = r.unpack("I")
        if n != net.masks[i].size:
            raise CheckpointError(f"mask for layer {i} has {n} entries, layer has {net.masks[i].size}")
        bits = np.frombuffer(r.take((n + 7) // 8), dtype=np.uint8)
        net.masks[i] = np.unpackbits(bits, count=n, bitorder="little").astype(bool)
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes at offset {r.pos}")
    return net


def save(net: Network, path) -> None:
    Path(path).write_bytes(dumps(net))


def load(path) -> Network:
    return loads(Path(path).read_bytes())
