"""
Binary checkpoint format

    magic      b"CDPK"
    version    uint32 LE
    config     uint32 LE length + canonical JSON (model config echo)
    stats      uint32 LE length + canonical JSON (normalization stats)
    count      uint32 LE number of tensors
    per tensor uint32 LE name length, UTF-8 name, uint32 LE rank,
               rank x uint64 LE dims, little-endian float32 data
"""

import json
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np

from numkernel import Tensor
from policy.errors import CheckpointError
from policy.model import ModelConfig, ModelParams

logger = logging.getLogger(__name__)

MAGIC = b"CDPK"
FORMAT_VERSION = 1


def canonical_json(data) -> bytes:
    return json.dumps(data, sort_keys=True, separators=(",", ":")).encode("utf-8")


@dataclass
class Checkpoint:
    config: dict
    stats: dict
    tensors: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)

    def model_config(self) -> ModelConfig:
        return ModelConfig.from_dict(self.config)

    def params(self, dtype=np.float32) -> ModelParams:
        """Model tensors only (training-state entries are skipped)."""
        return ModelParams({name: Tensor(arr.astype(dtype)) for name, arr in self.tensors.items()
                            if not name.startswith("train.")})

    def training_state(self) -> Dict[str, np.ndarray]:
        return {name[len("train."):]: arr for name, arr in self.tensors.items() if name.startswith("train.")}


def _u32(value: int) -> bytes:
    return np.array([value], dtype="<u4").tobytes()


def encode_checkpoint(config: dict, stats: dict, tensors: Dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, _u32(FORMAT_VERSION)]
    for blob in (canonical_json(config), canonical_json(stats)):
        parts += [_u32(len(blob)), blob]
    parts.append(_u32(len(tensors)))
    for name, arr in tensors.items():
        encoded = name.encode("utf-8")
        arr = np.asarray(arr)
        parts += [_u32(len(encoded)), encoded, _u32(arr.ndim),
                  np.array(arr.shape, dtype="<u8").tobytes(),
                  np.ascontiguousarray(arr, dtype="<f4").tobytes()]
    return b"".join(parts)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError(f"truncated checkpoint at byte {self.pos}")
        chunk = self.blob[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def array(self, dtype: str, count: int) -> np.ndarray:
        size = np.dtype(dtype).itemsize * count
        return np.frombuffer(self.take(size), dtype=dtype, count=count)

    def u32(self) -> int:
        return int(self.array("<u4", 1)[0])

    def json(self) -> dict:
        try:
            return json.loads(self.take(self.u32()).decode("utf-8"))
        except ValueError as e:
            raise CheckpointError(f"bad JSON section: {e}")


def decode_checkpoint(blob: bytes) -> Checkpoint:
    reader = _Reader(blob)
    if reader.take(4) != MAGIC:
        raise CheckpointError("bad magic, not a checkpoint file")
    version = reader.u32()
    if version != FORMAT_VERSION:
        raise CheckpointError(f"format_version {version} is not supported (expected {FORMAT_VERSION})")
    config = reader.json()
    stats = reader.json()
    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for _ in range(reader.u32()):
        name = reader.take(reader.u32()).decode("utf-8")
        rank = reader.u32()
        shape = tuple(int(d) for d in reader.array("<u8", rank))
        count = int(np.prod(shape)) if rank else 1
        tensors[name] = reader.array("<f4", count).reshape(shape).copy()
    if reader.pos != len(blob):
        raise CheckpointError(f"{len(blob) - reader.pos} trailing bytes after the last tensor")
    return Checkpoint(config, stats, tensors)


def save_checkpoint(path: Union[str, Path], params: ModelParams, config: dict, stats: dict,
                    extra: Optional[Dict[str, np.ndarray]] = None) -> Path:
    """
    Write params (plus optional "train.*" state tensors) to `path`.
    Round trips are bit-exact for float32 params.
    """
    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict(
        (name, t.data) for name, t in params.items())
    for name, arr in (extra or {}).items():
        tensors[f"train.{name}"] = np.asarray(arr)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(config, stats, tensors))
    logger.info(f"💾 Saved checkpoint with {len(tensors)} tensors to {path}")
    return path


def load_checkpoint(path: Union[str, Path], expected_config: Optional[dict] = None) -> Checkpoint:
    """Read a checkpoint; raise CheckpointError when its config echo differs from expected_config."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    ckpt = decode_checkpoint(path.read_bytes())
    if expected_config is not None and canonical_json(ckpt.config) != canonical_json(expected_config):
        raise CheckpointError(f"config echo in {path} does not match the live config")
    logger.info(f"📂 Loaded checkpoint {path} ({len(ckpt.tensors)} tensors)")
    return ckpt
