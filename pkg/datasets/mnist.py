# datasets/mnist.py

import gzip
import logging
from pathlib import Path
from typing import Optional

import numpy as np

from .shapes import Dataset

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803

IMAGE_FILES = {
    "train": "train-images-idx3-ubyte",
    "test": "t10k-images-idx3-ubyte",
}


def _find_file(directory: Path, stem: str) -> Path:
    for candidate in (stem, f"{stem}.gz", stem.replace("-idx3", ".idx3")):
        path = directory / candidate
        if path.exists():
            return path
    raise FileNotFoundError(f"MNIST file '{stem}' not found in {directory}")


def _read_bytes(path: Path) -> bytes:
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as fh:
            return fh.read()
    return path.read_bytes()


def parse_idx_images(payload: bytes, source: str = "<bytes>") -> np.ndarray:
    """Decode an IDX3 unsigned-byte image file into (count, rows, cols) floats in [0, 1]."""
    if len(payload) < 16:
        raise ValueError(f"{source}: truncated IDX header ({len(payload)} bytes)")

    magic, count, rows, cols = (int(v) for v in np.frombuffer(payload[:16], dtype=">u4"))
    if magic != IDX_IMAGES_MAGIC:
        raise ValueError(f"{source}: bad magic number 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}")

    expected = count * rows * cols
    if len(payload) - 16 < expected:
        raise ValueError(f"{source}: truncated payload, expected {expected} pixels, found {len(payload) - 16}")

    pixels = np.frombuffer(payload, dtype=np.uint8, count=expected, offset=16)
    return pixels.reshape(count, rows, cols).astype(np.float64) / 255.0


def load_mnist(path, split: str = "train", limit: Optional[int] = None) -> Dataset:
    """Read MNIST images from the standard IDX files in `path`."""
    if split not in IMAGE_FILES:
        raise ValueError(f"unknown MNIST split '{split}', expected one of {sorted(IMAGE_FILES)}")

    directory = Path(path)
    file_path = _find_file(directory, IMAGE_FILES[split])
    images = parse_idx_images(_read_bytes(file_path), source=str(file_path))

    if limit is not None:
        images = images[:limit]

    logger.info(f"[MNIST] loaded {len(images)} {split} images from {file_path}")
    return Dataset(
        images=images,
        split=split,
        provenance="mnist",
        config={"path": str(directory), "split": split, "limit": limit},
    )
