"""On-disk formats: the ``LRT1`` tensor container, model manifests and JSON reports.

Tensor file layout (all little-endian)::

    b"LRT1" | u8 version=1 | u64 rows | u64 cols | rows*cols float64, row-major
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .compressor import FactoredLayer
from .errors import FormatError
from .model import Activation, DenseLayer, SequentialModel

MAGIC = b"LRT1"
VERSION = 1
_HEADER = struct.Struct("<4sBQQ")
MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1


def _atomic_write(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_tensor(m) -> bytes:
    m = np.asarray(m, dtype="<f8")
    if m.ndim != 2:
        raise ValueError(f"only 2-D tensors are stored, got shape {m.shape}")
    return _HEADER.pack(MAGIC, VERSION, m.shape[0], m.shape[1]) + np.ascontiguousarray(m).tobytes()


def decode_tensor(buf: bytes) -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise FormatError(f"file too short for header ({len(buf)} < {_HEADER.size} bytes)", offset=len(buf))
    magic, version, rows, cols = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    if rows == 0 or cols == 0:
        raise FormatError(f"empty shape {rows}x{cols}", offset=5)
    expected = _HEADER.size + 8 * rows * cols
    if len(buf) != expected:
        raise FormatError(f"payload size mismatch for {rows}x{cols}: expected {expected} bytes, "
                          f"got {len(buf)}", offset=min(len(buf), expected))
    data = np.frombuffer(buf, dtype="<f8", offset=_HEADER.size).reshape(rows, cols)
    return data.astype(np.float64, copy=True)


def write_tensor(path, m) -> None:
    _atomic_write(path, encode_tensor(m))


def read_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=True) + "\n"


def write_json(path, obj) -> None:
    _atomic_write(path, dumps_json(obj).encode())


def save_model(model: SequentialModel, directory, extra: dict | None = None) -> Path:
    """Write ``manifest.json`` plus one tensor file per matrix."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for name, layer in zip(model.names, model.layers):
        entry = {"name": name, "shape": [layer.out_dim, layer.in_dim]}
        if isinstance(layer, FactoredLayer):
            entry.update(kind="factored", rank=layer.rank,
                         u=f"{name}.u.lrt", v=f"{name}.v.lrt")
            write_tensor(directory / entry["u"], layer.u_factor)
            write_tensor(directory / entry["v"], layer.v_factor)
        else:
            entry.update(kind="dense", weight=f"{name}.weight.lrt")
            write_tensor(directory / entry["weight"], layer.weight)
        entries.append(entry)
    manifest = {"version": MANIFEST_VERSION, "activation": model.activation.value,
                "input_dim": model.input_dim, "output_dim": model.output_dim, "layers": entries}
    if extra:
        manifest.update(extra)
    write_json(directory / MANIFEST_NAME, manifest)
    return directory


def read_manifest(directory) -> dict:
    path = Path(directory) / MANIFEST_NAME
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc.msg}", offset=exc.pos) from exc
    if manifest.get("version") != MANIFEST_VERSION:
        raise FormatError(f"{path}: unsupported manifest version {manifest.get('version')!r}")
    return manifest


def load_model(directory) -> SequentialModel:
    directory = Path(directory)
    manifest = read_manifest(directory)
    layers, names = [], []
    for entry in manifest["layers"]:
        kind = entry.get("kind")
        if kind == "dense":
            layer = DenseLayer(read_tensor(directory / entry["weight"]))
        elif kind == "factored":
            layer = FactoredLayer(read_tensor(directory / entry["u"]), read_tensor(directory / entry["v"]))
        else:
            raise FormatError(f"layer {entry.get('name')!r}: unknown kind {kind!r}")
        if [layer.out_dim, layer.in_dim] != list(entry["shape"]):
            raise FormatError(f"layer {entry['name']!r}: tensors are {layer.out_dim}x{layer.in_dim}, "
                              f"manifest says {entry['shape']}")
        layers.append(layer)
        names.append(entry["name"])
    return SequentialModel(tuple(layers), Activation(manifest["activation"]), tuple(names))
