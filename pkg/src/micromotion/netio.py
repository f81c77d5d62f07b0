"""Versioned little-endian binary serialization of trained networks.

Layout (all integers little-endian):

    magic  "MMN1"
    uint32 version (currently 1)
    uint8  kind     (1 = pixel-trace network, 2 = region 3D network)
    uint8  itemsize (4 = float32 parameters, 8 = float64)
    uint32 layer count
    per layer:
        uint32 kernel, uint32 c_in, uint32 c_out, uint32 dilation
        uint8  activation (0 = relu, 1 = linear)
        kernel*c_in*c_out floats (weights), c_out floats (bias)
    kind 2 only, after the layers:
        uint32 H, uint32 W, uint32 C
        H*W*C floats (dense weights), 1 float (dense bias)
        float64 dropout_p

Round trips are bit-exact, including parameter dtype.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .nn1d import Conv1DLayer, Network1D
from .net3d import Network3D
from .tensor_io import BadMagicError, FormatError, TruncatedFileError

NETWORK_MAGIC = b"MMN1"
NETWORK_VERSION = 1

_ACT_CODES = {"relu": 0, "linear": 1}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}
_DTYPES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


def _dump_layers(layers, dtype) -> bytes:
    chunks = []
    for layer in layers:
        chunks.append(struct.pack(
            "<IIIIB",
            layer.kernel_size, layer.in_channels, layer.out_channels,
            layer.dilation, _ACT_CODES[layer.activation],
        ))
        chunks.append(np.ascontiguousarray(layer.weights, dtype=dtype).tobytes())
        chunks.append(np.ascontiguousarray(layer.bias, dtype=dtype).tobytes())
    return b"".join(chunks)


def save_network(net, path) -> None:
    """Write a :class:`Network1D` or :class:`Network3D` to ``path``."""
    if isinstance(net, Network1D):
        kind, layers = 1, net.layers
    elif isinstance(net, Network3D):
        kind, layers = 2, net.pixelwise
    else:
        raise TypeError(f"cannot serialize {type(net).__name__}")
    itemsize = np.dtype(net.dtype).itemsize
    if itemsize not in _DTYPES:
        raise TypeError(f"unsupported parameter dtype {net.dtype}")
    dtype = _DTYPES[itemsize]
    parts = [
        NETWORK_MAGIC,
        struct.pack("<IBBI", NETWORK_VERSION, kind, itemsize, len(layers)),
        _dump_layers(layers, dtype),
    ]
    if kind == 2:
        h, w, c = net.dense_weights.shape
        parts.append(struct.pack("<III", h, w, c))
        parts.append(np.ascontiguousarray(net.dense_weights, dtype=dtype).tobytes())
        parts.append(np.ascontiguousarray(net.dense_bias, dtype=dtype).tobytes())
        parts.append(struct.pack("<d", net.dropout_p))
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise TruncatedFileError(f"{self.path}: truncated network file")
        out = self.raw[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, count: int, dtype) -> np.ndarray:
        return np.frombuffer(self.take(count * dtype.itemsize), dtype=dtype).copy()


def load_network(path):
    """Read a network file; returns :class:`Network1D` or :class:`Network3D`."""
    reader = _Reader(Path(path).read_bytes(), path)
    if reader.take(4) != NETWORK_MAGIC:
        raise BadMagicError(f"{path}: not a network file")
    version, kind, itemsize, n_layers = reader.unpack("<IBBI")
    if version != NETWORK_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if itemsize not in _DTYPES:
        raise FormatError(f"{path}: unsupported parameter itemsize {itemsize}")
    dtype = _DTYPES[itemsize]
    layers = []
    for _ in range(n_layers):
        k, c_in, c_out, dilation, act = reader.unpack("<IIIIB")
        if act not in _ACT_NAMES:
            raise FormatError(f"{path}: unknown activation code {act}")
        weights = reader.array(k * c_in * c_out, dtype).reshape(k, c_in, c_out)
        bias = reader.array(c_out, dtype)
        layers.append(Conv1DLayer(weights, bias, dilation, _ACT_NAMES[act]))
    if kind == 1:
        net = Network1D(layers)
    elif kind == 2:
        h, w, c = reader.unpack("<III")
        dense = reader.array(h * w * c, dtype).reshape(h, w, c)
        bias = reader.array(1, dtype)
        (dropout_p,) = reader.unpack("<d")
        net = Network3D(layers, dense, bias, dropout_p)
    else:
        raise FormatError(f"{path}: unknown network kind {kind}")
    if reader.pos != len(reader.raw):
        raise FormatError(f"{path}: trailing bytes after network payload")
    return net
