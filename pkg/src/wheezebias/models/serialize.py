"""Versioned binary model container.

Layout (little-endian)::

    8s   magic  b"WZMODEL\\0"
    u16  format version
    u16  length of family tag, then the tag (utf-8)
    u32  length of JSON header, then the header (hyperparams, info, scaler)
    u32  number of parameter blobs
    per blob:
        u16 name length, name (utf-8)
        u8  ndim, then ndim x u64 dims
        float64 data, C order

A JSON sidecar with the same stem summarizes the model for humans.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError, UnsupportedError
from ..fileio import atomic_write_bytes, atomic_write_json
from .base import FAMILIES, Standardizer, TrainedModel

MAGIC = b"WZMODEL\x00"
VERSION = 1


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def model_to_bytes(model: TrainedModel) -> bytes:
    blobs = dict(model.params)
    header = {"hyperparams": _jsonable(model.hyperparams), "info": _jsonable(model.info)}
    if model.scaler is not None:
        blobs["__scaler_mean"] = model.scaler.mean
        blobs["__scaler_std"] = model.scaler.std
        header["scaler_n_fit"] = int(model.scaler.n_fit)

    out = io.BytesIO()
    tag = model.family.encode()
    head = json.dumps(header, sort_keys=True).encode()
    out.write(MAGIC + struct.pack("<HH", VERSION, len(tag)) + tag)
    out.write(struct.pack("<I", len(head)) + head)
    out.write(struct.pack("<I", len(blobs)))
    for name in sorted(blobs):
        arr = np.ascontiguousarray(blobs[name], dtype="<f8")
        key = name.encode()
        out.write(struct.pack("<H", len(key)) + key)
        out.write(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.write(arr.tobytes())
    return out.getvalue()


def model_from_bytes(raw: bytes) -> TrainedModel:
    buf = memoryview(raw)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError("truncated model file")
        chunk = bytes(buf[pos:pos + n])
        pos += n
        return chunk

    if take(8) != MAGIC:
        raise FormatError("not a model file (bad magic)")
    version, tag_len = struct.unpack("<HH", take(4))
    if version != VERSION:
        raise UnsupportedError(f"model format version {version} (expected {VERSION})")
    family = take(tag_len).decode()
    if family not in FAMILIES:
        raise FormatError(f"unknown family tag {family!r}")
    (head_len,) = struct.unpack("<I", take(4))
    header = json.loads(take(head_len))
    (n_blobs,) = struct.unpack("<I", take(4))
    blobs = {}
    for _ in range(n_blobs):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode()
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        count = int(np.prod(shape)) if ndim else 1
        blobs[name] = np.frombuffer(take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes in model file")

    scaler = None
    if "__scaler_mean" in blobs:
        scaler = Standardizer(blobs.pop("__scaler_mean"), blobs.pop("__scaler_std"),
                              header.get("scaler_n_fit", 0))
    return TrainedModel(family, header["hyperparams"], blobs, scaler, header.get("info", {}))


def save_model(path, model: TrainedModel):
    """Write ``path`` and a ``.json`` sidecar next to it."""
    path = Path(path)
    atomic_write_bytes(path, model_to_bytes(model))
    summary = {
        "family": model.family,
        "format_version": VERSION,
        "hyperparams": _jsonable(model.hyperparams),
        "parameters": {k: list(np.shape(v)) for k, v in sorted(model.params.items())},
        "standardized": model.scaler is not None,
        "info": _jsonable(model.info),
    }
    atomic_write_json(path.with_suffix(".json"), summary)


def load_model(path) -> TrainedModel:
    return model_from_bytes(Path(path).read_bytes())
