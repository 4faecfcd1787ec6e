# autodiff/checkpoint.py

"""
Flat binary tensor container.

    magic   b"GRG1"
    records, until end of file:
        name length   uint32 LE
        name          utf-8 bytes
        rank          uint32 LE
        dims          rank x uint64 LE
        payload       prod(dims) x float64 LE, row-major
"""

import logging
from pathlib import Path
from typing import Dict, Mapping

import numpy as np

from genreg.storage import write_atomic

logger = logging.getLogger(__name__)

MAGIC = b"GRG1"

_U32 = np.dtype("<u4")
_U64 = np.dtype("<u8")
_F64 = np.dtype("<f8")


def dumps(tensors: Mapping[str, np.ndarray]) -> bytes:
    chunks = [MAGIC]
    for name, value in tensors.items():
        arr = np.ascontiguousarray(np.asarray(value, dtype=np.float64))
        encoded = name.encode("utf-8")
        chunks.append(np.array([len(encoded)], dtype=_U32).tobytes())
        chunks.append(encoded)
        chunks.append(np.array([arr.ndim], dtype=_U32).tobytes())
        chunks.append(np.array(arr.shape, dtype=_U64).tobytes())
        chunks.append(arr.astype(_F64, copy=False).tobytes())
    return b"".join(chunks)


def loads(payload: bytes, source: str = "<bytes>") -> Dict[str, np.ndarray]:
    if payload[:4] != MAGIC:
        raise ValueError(f"{source}: bad magic {payload[:4]!r}, expected {MAGIC!r}")

    out: Dict[str, np.ndarray] = {}
    pos = 4
    total = len(payload)

    def take(nbytes: int, what: str) -> bytes:
        nonlocal pos
        if pos + nbytes > total:
            raise ValueError(f"{source}: truncated while reading {what} at byte {pos}")
        chunk = payload[pos:pos + nbytes]
        pos += nbytes
        return chunk

    while pos < total:
        name_len = int(np.frombuffer(take(4, "name length"), dtype=_U32)[0])
        name = take(name_len, "name").decode("utf-8")
        rank = int(np.frombuffer(take(4, f"rank of '{name}'"), dtype=_U32)[0])
        dims = tuple(int(d) for d in np.frombuffer(take(8 * rank, f"dims of '{name}'"), dtype=_U64))
        count = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(take(8 * count, f"payload of '{name}'"), dtype=_F64)
        if name in out:
            raise ValueError(f"{source}: duplicate tensor name '{name}'")
        out[name] = data.reshape(dims).astype(np.float64)

    return out


def save_tensors(path, tensors: Mapping[str, np.ndarray]) -> Path:
    path = write_atomic(path, dumps(tensors))
    logger.debug(f"[Checkpoint] wrote {len(tensors)} tensors to {path}")
    return path


def load_tensors(path) -> Dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return loads(path.read_bytes(), source=str(path))
