"""Binary model files.

Layout (little-endian): ``GSNN`` magic, u32 format version, u32 length of a
UTF-8 JSON descriptor, the descriptor, then every parameter tensor as
float32 in descriptor order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..audio_io import atomic_write_bytes
from ..errors import FormatError, TruncatedFileError
from .model import Architecture, CnnModel

MAGIC = b"GSNN"
FORMAT_VERSION = 1


def model_bytes(model: CnnModel) -> bytes:
    descriptor = {
        "architecture": model.arch.to_json(),
        "dropout_rate": model.dropout_rate,
        "version": model.version,
        "layers": [{"name": name, "shape": list(arr.shape)} for name, arr in model.params.items()],
    }
    blob = json.dumps(descriptor, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(blob)), blob]
    parts += [np.ascontiguousarray(arr, dtype="<f4").tobytes() for arr in model.params.values()]
    return b"".join(parts)


def save_model(model: CnnModel, path) -> None:
    atomic_write_bytes(path, model_bytes(model))


def load_model(path) -> CnnModel:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: not a model file (bad magic)")
    if len(raw) < 12:
        raise TruncatedFileError(f"{path}: truncated header")
    version, n = struct.unpack_from("<II", raw, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported model format version {version}")
    if len(raw) < 12 + n:
        raise TruncatedFileError(f"{path}: truncated descriptor")
    try:
        desc = json.loads(raw[12:12 + n].decode("utf-8"))
        arch = Architecture.from_json(desc["architecture"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: bad descriptor: {exc}") from None

    params = {}
    pos = 12 + n
    for layer in desc["layers"]:
        shape = tuple(layer["shape"])
        count = int(np.prod(shape))
        if len(raw) < pos + 4 * count:
            raise TruncatedFileError(f"{path}: truncated weights for {layer['name']}")
        params[layer["name"]] = np.frombuffer(raw, dtype="<f4", count=count, offset=pos).reshape(shape).copy()
        pos += 4 * count
    return CnnModel(arch, float(desc["dropout_rate"]), np.float32, params, str(desc.get("version", "1")))
