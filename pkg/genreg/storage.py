# genreg/storage.py

import csv
import io
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
from PIL import Image

logger = logging.getLogger(__name__)


def ensure_dir(path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_atomic(path, payload: bytes) -> Path:
    """
    Write bytes to `path` atomically: a temp file in the same directory is
    filled and then renamed over the target, so readers never observe a
    half-written artifact (concurrent solves write into the same run tree).
    """
    path = Path(path)
    ensure_dir(path.parent)

    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as tmp:
            tmp.write(payload)
        os.replace(tmp_name, path)
    except Exception:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise

    return path


def write_text(path, text: str) -> Path:
    return write_atomic(path, text.encode("utf-8"))


def write_json(path, data: Dict[str, Any]) -> Path:
    return write_text(path, json.dumps(data, indent=2, sort_keys=True, default=str) + "\n")


def read_json(path) -> Dict[str, Any]:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def format_float(value: float) -> str:
    # repr() round-trips float64 exactly, so reruns produce identical bytes.
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_float(v) for v in row])
    return write_text(path, buf.getvalue())


def read_csv(path) -> List[Dict[str, str]]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


# ============================================================
#  PGM PREVIEWS
# ============================================================

def to_uint8(image: np.ndarray) -> np.ndarray:
    clipped = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    return np.round(clipped * 255.0).astype(np.uint8)


def write_pgm(path, image: np.ndarray) -> Path:
    """Save an image with values in [0, 1] as an 8-bit binary PGM."""
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError(f"PGM preview needs a 2-D image, got shape {image.shape}")

    buf = io.BytesIO()
    Image.fromarray(to_uint8(image)).save(buf, format="PPM")
    return write_atomic(path, buf.getvalue())


def mosaic(images: Sequence[np.ndarray], n_cols: int, pad: int = 1, fill: float = 1.0) -> np.ndarray:
    """Tile equally shaped 2-D images row-major into one grid image."""
    if not images:
        raise ValueError("mosaic needs at least one image")

    h, w = np.asarray(images[0]).shape
    n_rows = -(-len(images) // n_cols)
    grid = np.full((n_rows * (h + pad) + pad, n_cols * (w + pad) + pad), fill, dtype=np.float64)

    for k, img in enumerate(images):
        img = np.asarray(img, dtype=np.float64)
        if img.shape != (h, w):
            raise ValueError(f"mosaic tile {k} has shape {img.shape}, expected {(h, w)}")
        r, c = divmod(k, n_cols)
        top = pad + r * (h + pad)
        left = pad + c * (w + pad)
        grid[top:top + h, left:left + w] = img

    return grid


def run_directory(root, name: str, seed: Optional[int] = None) -> Path:
    """Deterministic run folder: <root>/<name>[-seed<seed>]."""
    folder = name if seed is None else f"{name}-seed{seed}"
    return ensure_dir(Path(root) / folder)
