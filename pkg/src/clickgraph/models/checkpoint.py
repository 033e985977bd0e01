"""``CTRM`` checkpoint files.

magic "CTRM" | u16 version | u32 header length | UTF-8 JSON header
u32 tensor count, then per tensor:
    u16 name length | name | u8 ndim | ndim x u32 dims | little-endian float64 data

The header carries the model config, field sizes, generation and Adam
scalars; Adam moments are stored as tensors named ``adam.m/<param>`` and
``adam.v/<param>`` so continued training resumes exactly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..data import TruncatedFileError, _Reader
from ..numerics import AdamState
from .base import ModelConfig, ModelError, ModelState

MAGIC = b"CTRM"
VERSION = 1


class CheckpointError(ModelError):
    pass


def save_checkpoint(state: ModelState, path) -> None:
    header = {
        "config": state.config.to_dict(),
        "field_sizes": list(state.field_sizes),
        "generation": state.generation,
        "adam": {
            "lr": state.adam.lr, "beta1": state.adam.beta1, "beta2": state.adam.beta2,
            "eps": state.adam.eps, "t": state.adam.t,
        },
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    tensors = dict(state.params)
    tensors.update({f"adam.m/{n}": a for n, a in state.adam.m.items()})
    tensors.update({f"adam.v/{n}": a for n, a in state.adam.v.items()})
    chunks = [MAGIC, struct.pack("<HI", VERSION, len(blob)), blob, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f8")
        chunks.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes(order="C"))
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> ModelState:
    data = Path(path).read_bytes()
    reader = _Reader(data)
    try:
        if reader.take(4) != MAGIC:
            raise CheckpointError(f"{path}: not a CTRM checkpoint")
        version, length = reader.unpack("<HI")
        if version != VERSION:
            raise CheckpointError(f"{path}: checkpoint version {version}, expected {VERSION}")
        header = json.loads(reader.take(length).decode("utf-8"))
        (count,) = reader.unpack("<I")
        tensors = {}
        for _ in range(count):
            (n,) = reader.unpack("<H")
            name = reader.take(n).decode("utf-8")
            (ndim,) = reader.unpack("<B")
            shape = reader.unpack(f"<{ndim}I")
            size = int(np.prod(shape, dtype=np.int64))
            tensors[name] = np.frombuffer(reader.take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    except TruncatedFileError as err:
        raise CheckpointError(f"{path}: truncated checkpoint ({err})") from None
    params = {n: a for n, a in tensors.items() if not n.startswith("adam.")}
    adam = AdamState(
        m={n[len("adam.m/"):]: a for n, a in tensors.items() if n.startswith("adam.m/")},
        v={n[len("adam.v/"):]: a for n, a in tensors.items() if n.startswith("adam.v/")},
        **header["adam"],
    )
    return ModelState(
        ModelConfig.from_dict(header["config"]),
        tuple(header["field_sizes"]),
        params,
        adam,
        header["generation"],
    )
