"""``.wtz`` weight files.

Layout::

    8 bytes   magic  b"WTZNET\\r\\n"
    uint32    format version (little-endian)
    uint32    manifest length in bytes
    manifest  UTF-8 JSON: input shape, loss, layer kinds/configs, array shapes
    payload   every parameter then buffer of every layer, in manifest order,
              as little-endian float32
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .layers import LAYER_KINDS
from .network import Network

__all__ = ["WeightsFormatError", "WeightsTruncatedError", "save_weights", "load_weights",
           "write_weights", "read_weights", "MAGIC", "VERSION"]

MAGIC = b"WTZNET\r\n"
VERSION = 1
_HEADER = struct.Struct("<II")


class WeightsFormatError(ValueError):
    """The byte stream is not a weights file this version understands."""


class WeightsTruncatedError(WeightsFormatError):
    """The byte stream ends before the declared payload."""


def save_weights(net: Network) -> bytes:
    layers, chunks = [], []
    for layer in net.layers:
        arrays = []
        for group, store in (("params", layer.params), ("buffers", layer.buffers)):
            for name, arr in store.items():
                arrays.append([group, name, list(arr.shape)])
                chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        layers.append({"kind": layer.kind, "config": layer.config(), "arrays": arrays})
    manifest = json.dumps({"input_shape": list(net.input_shape), "loss": net.loss, "layers": layers},
                          sort_keys=True).encode("utf-8")
    return MAGIC + _HEADER.pack(VERSION, len(manifest)) + manifest + b"".join(chunks)


def load_weights(data: bytes) -> Network:
    if len(data) < len(MAGIC) + _HEADER.size:
        if MAGIC.startswith(data[:len(MAGIC)]):
            raise WeightsTruncatedError("weights stream ends inside the header")
        raise WeightsFormatError("not a weights file (bad magic)")
    if data[:len(MAGIC)] != MAGIC:
        raise WeightsFormatError("not a weights file (bad magic)")
    version, mlen = _HEADER.unpack_from(data, len(MAGIC))
    if version != VERSION:
        raise WeightsFormatError(f"unsupported weights version {version} (expected {VERSION})")
    pos = len(MAGIC) + _HEADER.size
    if len(data) < pos + mlen:
        raise WeightsTruncatedError("weights stream ends inside the manifest")
    try:
        manifest = json.loads(data[pos:pos + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WeightsFormatError(f"corrupt manifest: {exc}") from None
    pos += mlen
    layers = []
    for spec in manifest["layers"]:
        cls = LAYER_KINDS.get(spec["kind"])
        if cls is None:
            raise WeightsFormatError(f"unknown layer kind {spec['kind']!r}")
        layer = cls(**spec["config"])
        for group, name, shape in spec["arrays"]:
            count = int(np.prod(shape))
            end = pos + 4 * count
            if end > len(data):
                raise WeightsTruncatedError(f"weights stream ends inside {spec['kind']}.{name}")
            arr = np.frombuffer(data, dtype="<f4", count=count, offset=pos).reshape(shape).astype(np.float32)
            getattr(layer, group)[name] = arr
            pos = end
        layers.append(layer)
    if pos != len(data):
        raise WeightsFormatError(f"{len(data) - pos} trailing bytes after payload")
    return Network(layers, tuple(manifest["input_shape"]), manifest["loss"])


def write_weights(path, net: Network) -> None:
    Path(path).write_bytes(save_weights(net))


def read_weights(path) -> Network:
    return load_weights(Path(path).read_bytes())
