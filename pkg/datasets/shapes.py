# datasets/shapes.py

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterator, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from autodiff.tensor import Tensor

logger = logging.getLogger(__name__)

SPLIT_CODES = {"train": 0, "test": 1, "tune": 2}


# ------------------------------------------------------------
# Dataset container
# ------------------------------------------------------------
@dataclass
class Dataset:
    images: np.ndarray  # (count, H, W), values in [0, 1]
    split: str
    provenance: str  # shapes | shapes+ | mnist
    masks: Dict[str, np.ndarray] = field(default_factory=dict)
    config: Dict = field(default_factory=dict)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        if self.images.ndim != 3:
            raise ValueError(f"dataset images must be (count, H, W), got {self.images.shape}")
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise ValueError(f"{self.provenance} images fall outside [0, 1]")

    def __len__(self) -> int:
        return self.images.shape[0]

    def __getitem__(self, index: int) -> Tensor:
        return Tensor(self.images[index])

    @property
    def image_shape(self):
        return self.images.shape[1:]

    def take(self, count: int, offset: int = 0) -> "Dataset":
        sl = slice(offset, offset + count)
        return Dataset(
            images=self.images[sl],
            split=self.split,
            provenance=self.provenance,
            masks={k: v[sl] for k, v in self.masks.items()},
            config=dict(self.config),
        )


def train_test_split(
    dataset: Dataset,
    test_count: int,
    rng: Optional[np.random.Generator] = None,
    names=("train", "test"),
):
    """
    Hold out `test_count` images. Without `rng` the held-out images are the
    last ones, so the kept part is a prefix of the input; with `rng` both parts
    come from one seeded permutation.
    """
    if not 0 < test_count < len(dataset):
        raise ValueError(f"test_count must be in [1, {len(dataset) - 1}], got {test_count}")

    order = rng.permutation(len(dataset)) if rng is not None else np.arange(len(dataset))
    cut = len(dataset) - test_count

    def part(index, split):
        return Dataset(
            images=dataset.images[index],
            split=split,
            provenance=dataset.provenance,
            masks={k: v[index] for k, v in dataset.masks.items()},
            config=dict(dataset.config),
        )

    return part(order[:cut], names[0]), part(order[cut:], names[1])


def iterate_batches(dataset: Dataset, batch_size: int, rng: np.random.Generator, shuffle: bool = True) -> Iterator[np.ndarray]:
    """Yield (B, H, W) batches; the last batch may be smaller."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be positive, got {batch_size}")
    order = rng.permutation(len(dataset)) if shuffle else np.arange(len(dataset))
    for start in range(0, len(order), batch_size):
        yield dataset.images[order[start:start + batch_size]]


# ------------------------------------------------------------
# Shapes / Shapes+ configuration
# ------------------------------------------------------------
class ShapesConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    image_size: int = Field(32, ge=16)
    count: int = Field(4000, ge=1)
    seed: int = 0
    split: Literal["train", "test", "tune"] = "train"
    intensity_low: float = Field(0.4, gt=0.0, le=1.0)
    intensity_high: float = Field(0.9, gt=0.0, le=1.0)
    bright_spot: bool = False

    min_radius: float = 3.0
    max_radius: Optional[float] = None  # default image_size / 4
    min_side: int = 4
    max_side: Optional[int] = None  # default image_size / 2
    spot_radius: float = 2.0
    spot_intensity: float = 1.0
    max_attempts: int = Field(1000, ge=1)

    @model_validator(mode="after")
    def _check_ranges(self):
        if self.intensity_low > self.intensity_high:
            raise ValueError("intensity_low must not exceed intensity_high")
        return self

    @property
    def radius_range(self):
        return self.min_radius, self.max_radius if self.max_radius is not None else self.image_size / 4

    @property
    def side_range(self):
        return self.min_side, self.max_side if self.max_side is not None else self.image_size // 2


# ============================================================
#  GEOMETRY
# ============================================================

def _disc_mask(size: int, cy: float, cx: float, radius: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2


def _rect_mask(size: int, top: int, left: int, height: int, width: int) -> np.ndarray:
    mask = np.zeros((size, size), dtype=bool)
    mask[top:top + height, left:left + width] = True
    return mask


def _sample_layout(config: ShapesConfig, rng: np.random.Generator):
    size = config.image_size
    r_lo, r_hi = config.radius_range
    s_lo, s_hi = config.side_range
    if r_hi < r_lo or s_hi < s_lo or 2 * r_hi >= size or s_hi > size:
        raise ValueError(
            f"infeasible Shapes geometry: radius in [{r_lo}, {r_hi}], sides in [{s_lo}, {s_hi}] "
            f"for {size}x{size} images"
        )

    for _ in range(config.max_attempts):
        radius = rng.uniform(r_lo, r_hi)
        cy = rng.uniform(radius, size - 1 - radius)
        cx = rng.uniform(radius, size - 1 - radius)
        height = int(rng.integers(s_lo, s_hi + 1))
        width = int(rng.integers(s_lo, s_hi + 1))
        top = int(rng.integers(0, size - height + 1))
        left = int(rng.integers(0, size - width + 1))

        circle = _disc_mask(size, cy, cx, radius)
        rect = _rect_mask(size, top, left, height, width)
        if np.any(circle & rect):
            continue
        return circle, rect, (cy, cx, radius)

    raise ValueError(
        f"infeasible Shapes geometry: no non-overlapping placement in a {size}x{size} image "
        f"after {config.max_attempts} attempts"
    )


def _sample_spot(config: ShapesConfig, circle_geom, rng: np.random.Generator) -> np.ndarray:
    cy, cx, radius = circle_geom
    reach = max(radius - config.spot_radius, 0.0)
    while True:
        dy, dx = rng.uniform(-reach, reach, size=2)
        if dy * dy + dx * dx <= reach * reach:
            break
    return _disc_mask(config.image_size, cy + dy, cx + dx, config.spot_radius)


def render_shape_image(config: ShapesConfig, index: int):
    """One image plus its masks; a pure function of (seed, split, index)."""
    rng = np.random.default_rng([config.seed, SPLIT_CODES[config.split], index])
    circle, rect, geom = _sample_layout(config, rng)

    while True:
        c_val, r_val = rng.uniform(config.intensity_low, config.intensity_high, size=2)
        if c_val != r_val:
            break

    image = np.zeros((config.image_size, config.image_size))
    image[circle] = c_val
    image[rect] = r_val

    spot = np.zeros_like(circle)
    if config.bright_spot:
        spot = _sample_spot(config, geom, rng)
        image[spot] = config.spot_intensity

    return image, circle, rect, spot


def generate_shapes(config: ShapesConfig) -> Dataset:
    """
    Black background, one constant-intensity circle and one constant-intensity
    rectangle that never overlap. Shapes+ adds a bright disc inside the circle.
    """
    images, circles, rects, spots = [], [], [], []
    for index in range(config.count):
        image, circle, rect, spot = render_shape_image(config, index)
        images.append(image)
        circles.append(circle)
        rects.append(rect)
        spots.append(spot)

    provenance = "shapes+" if config.bright_spot else "shapes"
    logger.info(f"[Shapes] generated {config.count} {provenance} images ({config.split}, seed={config.seed})")

    masks = {"circle": np.array(circles), "rectangle": np.array(rects)}
    if config.bright_spot:
        masks["spot"] = np.array(spots)

    return Dataset(
        images=np.array(images),
        split=config.split,
        provenance=provenance,
        masks=masks,
        config=config.model_dump(),
    )
