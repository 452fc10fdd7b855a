# app/services/checkpoint_service.py

"""
Checkpoint binario del modelo:

    "CRAM" | versión u32 | largo u32 + ModelConfig JSON |
    por tensor: largo u32 + nombre | filas u64 | columnas u64 | float64 LE por filas

Todo little-endian. La carga valida nombres y formas contra el ModelConfig.
"""

import json
import logging
import struct
from pathlib import Path
from typing import Tuple

import numpy as np
from pydantic import ValidationError

from app.core import ndiff
from app.core.errors import CheckpointFormatError
from app.core.logging import log_structured
from app.schemas.model import ModelConfig
from app.services.cra_model import CraParams, param_shapes

logger = logging.getLogger(__name__)

MAGIC = b"CRAM"
VERSION = 1

_U32 = struct.Struct("<I")
_DIMS = struct.Struct("<QQ")


def encode_checkpoint(config: ModelConfig, params: CraParams) -> bytes:
    blob = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, _U32.pack(VERSION), _U32.pack(len(blob)), blob]
    for name, tensor in params.items():
        raw_name = name.encode("utf-8")
        rows, cols = tensor.shape
        parts += [
            _U32.pack(len(raw_name)), raw_name, _DIMS.pack(rows, cols),
            np.ascontiguousarray(tensor.value, dtype="<f8").tobytes(),
        ]
    return b"".join(parts)


def save_checkpoint(path: str | Path, config: ModelConfig, params: CraParams) -> None:
    data = encode_checkpoint(config, params)
    Path(path).write_bytes(data)
    log_structured(logger, "info", "checkpoint.saved", path=str(path), tensors=len(params), bytes=len(data))


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data = data
        self.pos = 0
        self.source = source

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointFormatError(f"{self.source}: truncated at byte {self.pos} (needed {n} more)")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return _U32.unpack(self.take(_U32.size))[0]


def decode_checkpoint(data: bytes, source: str = "<bytes>") -> Tuple[ModelConfig, CraParams]:
    reader = _Reader(data, source)
    magic = reader.take(4)
    if magic != MAGIC:
        raise CheckpointFormatError(f"{source}: bad magic {magic!r}, expected {MAGIC!r}")
    version = reader.u32()
    if version != VERSION:
        raise CheckpointFormatError(f"{source}: unsupported checkpoint version {version}")
    blob = reader.take(reader.u32())
    try:
        config = ModelConfig(**json.loads(blob.decode("utf-8")))
    except (ValueError, ValidationError) as exc:
        raise CheckpointFormatError(f"{source}: unreadable model config ({exc})") from exc

    expected = param_shapes(config)
    params: CraParams = {}
    while reader.pos < len(data):
        name = reader.take(reader.u32()).decode("utf-8")
        rows, cols = _DIMS.unpack(reader.take(_DIMS.size))
        if name not in expected:
            raise CheckpointFormatError(f"{source}: unexpected tensor {name!r}")
        if (rows, cols) != expected[name]:
            raise CheckpointFormatError(
                f"{source}: tensor {name!r} has shape {(rows, cols)}, config implies {expected[name]}"
            )
        values = np.frombuffer(reader.take(rows * cols * 8), dtype="<f8").reshape(rows, cols)
        params[name] = ndiff.parameter(values.astype(np.float64), name=name)
    missing = [n for n in expected if n not in params]
    if missing:
        raise CheckpointFormatError(f"{source}: missing tensors {missing}")
    return config, {name: params[name] for name in expected}


def load_checkpoint(path: str | Path) -> Tuple[ModelConfig, CraParams]:
    config, params = decode_checkpoint(Path(path).read_bytes(), source=str(path))
    log_structured(logger, "info", "checkpoint.loaded", path=str(path), variant=config.variant.value)
    return config, params
