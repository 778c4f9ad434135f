"""
SLMPCKPT checkpoint container
Named tensors (trainables first, then moving statistics) plus a JSON metadata trailer
"""

import json
import struct
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from src.core.errors import CheckpointError
from src.core.models import MODEL_IDS, SlumpRegressor, build_model
from src.core.rng import RngStream

MAGIC = b"SLMPCKPT"
VERSION = 1
DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def _dtype_code(dtype: np.dtype) -> int:
    for code, known in DTYPE_CODES.items():
        if np.dtype(dtype).kind == "f" and np.dtype(dtype).itemsize == known.itemsize:
            return code
    raise CheckpointError(f"Unsupported tensor dtype {dtype}")


def state_records(model: SlumpRegressor) -> List[Tuple[str, np.ndarray, bool]]:
    """(name, array, trainable) in serialization order"""
    records = [(name, param.data, True) for name, param in model.named_parameters()]
    records += [(name, buffer.data, False) for name, buffer in model.named_buffers()]
    return records


def encode_checkpoint(model: SlumpRegressor, metadata: Optional[Dict[str, Any]] = None) -> bytes:
    records = state_records(model)
    chunks = [MAGIC, struct.pack("<HBI", VERSION, ord(model.model_id), len(records))]
    for name, array, trainable in records:
        encoded = name.encode("utf-8")
        code = _dtype_code(array.dtype)
        chunks.append(struct.pack("<H", len(encoded)) + encoded)
        chunks.append(struct.pack("<B", array.ndim) + struct.pack(f"<{array.ndim}I", *array.shape))
        chunks.append(struct.pack("<BB", code, int(trainable)))
        chunks.append(np.ascontiguousarray(array, dtype=DTYPE_CODES[code]).tobytes())
    trailer = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
    chunks.append(struct.pack("<I", len(trailer)) + trailer)
    return b"".join(chunks)


def save_checkpoint(path: Union[str, Path], model: SlumpRegressor,
                    metadata: Optional[Dict[str, Any]] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(model, metadata))
    return path


class _Reader:
    def __init__(self, payload: bytes, source: str):
        self.payload = payload
        self.offset = 0
        self.source = source

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.payload):
            raise CheckpointError(f"{self.source}: truncated checkpoint")
        chunk = self.payload[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str) -> Tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(payload: bytes, source: str = "<bytes>"):
    """(model id, {name: (array, trainable)}, metadata)"""
    reader = _Reader(payload, source)
    if reader.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{source}: not a SLMPCKPT file")
    version, model_byte, count = reader.unpack("<HBI")
    if version != VERSION:
        raise CheckpointError(f"{source}: unsupported checkpoint version {version}")
    model_id = chr(model_byte)
    if model_id not in MODEL_IDS:
        raise CheckpointError(f"{source}: unknown model id byte {model_byte}")

    tensors: Dict[str, Tuple[np.ndarray, bool]] = {}
    for _ in range(count):
        (length,) = reader.unpack("<H")
        name = reader.take(length).decode("utf-8")
        (rank,) = reader.unpack("<B")
        shape = reader.unpack(f"<{rank}I")
        code, trainable = reader.unpack("<BB")
        if code not in DTYPE_CODES:
            raise CheckpointError(f"{source}: unknown dtype code {code} for '{name}'")
        dtype = DTYPE_CODES[code]
        size = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        array = np.frombuffer(reader.take(size), dtype=dtype).reshape(shape).copy()
        tensors[name] = (array, bool(trainable))
    (length,) = reader.unpack("<I")
    metadata = json.loads(reader.take(length).decode("utf-8")) if length else {}
    return model_id, tensors, metadata


def load_state(model: SlumpRegressor, tensors: Dict[str, Tuple[np.ndarray, bool]], source: str = "<state>"):
    expected = {name: (array, trainable) for name, array, trainable in state_records(model)}
    if set(expected) != set(tensors):
        missing = sorted(set(expected) - set(tensors))
        extra = sorted(set(tensors) - set(expected))
        raise CheckpointError(f"{source}: tensor names differ (missing {missing}, unexpected {extra})")
    targets = dict(model.named_parameters())
    targets.update(dict(model.named_buffers()))
    for name, (array, trainable) in tensors.items():
        current, should_train = expected[name]
        if current.shape != array.shape or trainable != should_train:
            raise CheckpointError(f"{source}: tensor '{name}' is {array.shape}, expected {current.shape}")
        targets[name].data = array.astype(current.dtype, copy=True)


def load_checkpoint(path: Union[str, Path], dtype: Optional[str] = None) -> Tuple[SlumpRegressor, Dict[str, Any]]:
    """Rebuild the model a checkpoint was written from"""
    path = Path(path)
    try:
        payload = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}") from e
    model_id, tensors, metadata = decode_checkpoint(payload, source=str(path))
    stored = next(iter(tensors.values()))[0].dtype if tensors else np.dtype("<f4")
    model = build_model(model_id, RngStream(seed=0), dtype=dtype or ("f64" if stored.itemsize == 8 else "f32"))
    load_state(model, tensors, source=str(path))
    model.eval()
    return model, metadata


def snapshot(model: SlumpRegressor) -> Dict[str, Tuple[np.ndarray, bool]]:
    """In-memory copy of every tensor, restorable with load_state"""
    return {name: (array.copy(), trainable) for name, array, trainable in state_records(model)}
