"""Model checkpoint file format.

Layout (little-endian throughout):
    magic  b"ADCK"
    u32    format version (currently 1)
    u32    metadata length, then that many bytes of UTF-8 JSON
    u32    parameter count
    per parameter:
        u16   name length, then UTF-8 name
        u8    ndim, then ndim x u32 dims
        row-major float32 data

Parameters are written in sorted-name order so identical models produce
identical files.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Dict, Tuple

import numpy as np

from .tensor import Tensor, parameter

MAGIC = b"ADCK"
VERSION = 1


def save_checkpoint(path, params: Dict[str, Tensor], metadata: dict | None = None) -> None:
    path = Path(path)
    meta = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(meta)))
        fh.write(meta)
        fh.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            data = np.ascontiguousarray(params[name].data, dtype=np.float32)
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", data.ndim))
            for d in data.shape:
                fh.write(struct.pack("<I", d))
            fh.write(data.tobytes(order="C"))


def load_checkpoint(path) -> Tuple[Dict[str, Tensor], dict]:
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (mlen,) = struct.unpack("<I", fh.read(4))
        metadata = json.loads(fh.read(mlen).decode("utf-8")) if mlen else {}
        (count,) = struct.unpack("<I", fh.read(4))
        params: Dict[str, Tensor] = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = tuple(struct.unpack("<I", fh.read(4))[0] for _ in range(ndim))
            n = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(4 * n), dtype="<f4").reshape(shape)
            params[name] = parameter(np.array(data), name)
    return params, metadata
