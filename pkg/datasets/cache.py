# datasets/cache.py

import hashlib
import logging
from pathlib import Path

import numpy as np

from autodiff import checkpoint
from genreg.storage import read_json, write_json

from .shapes import Dataset

logger = logging.getLogger(__name__)


def dataset_checksum(dataset: Dataset) -> str:
    return hashlib.sha256(np.ascontiguousarray(dataset.images, dtype="<f8").tobytes()).hexdigest()


def save_dataset(dataset: Dataset, directory) -> Path:
    """
    One tensor file per split (`<split>.grg`, tensors `images` and `mask.*`)
    plus a JSON manifest with counts, seed and the config echo.
    """
    directory = Path(directory)
    tensors = {"images": dataset.images}
    for name, mask in dataset.masks.items():
        tensors[f"mask.{name}"] = mask.astype(np.float64)

    data_path = checkpoint.save_tensors(directory / f"{dataset.split}.grg", tensors)
    write_json(
        directory / f"{dataset.split}.json",
        {
            "split": dataset.split,
            "provenance": dataset.provenance,
            "count": len(dataset),
            "image_shape": list(dataset.image_shape),
            "seed": dataset.config.get("seed"),
            "bright_spot": dataset.provenance == "shapes+",
            "config": dataset.config,
            "sha256": dataset_checksum(dataset),
        },
    )
    logger.info(f"[Cache] saved {len(dataset)} {dataset.provenance} images to {data_path}")
    return data_path


def load_dataset(directory, split: str = "train") -> Dataset:
    directory = Path(directory)
    manifest = read_json(directory / f"{split}.json")
    tensors = checkpoint.load_tensors(directory / f"{split}.grg")

    images = tensors.pop("images")
    if images.shape[0] != manifest["count"]:
        raise ValueError(
            f"{directory / f'{split}.grg'}: manifest says {manifest['count']} images, file has {images.shape[0]}"
        )

    masks = {name.split(".", 1)[1]: value.astype(bool) for name, value in tensors.items() if name.startswith("mask.")}
    return Dataset(
        images=images,
        split=manifest["split"],
        provenance=manifest["provenance"],
        masks=masks,
        config=manifest.get("config", {}),
    )
