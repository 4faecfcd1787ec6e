# operators/radon.py

"""
Parallel-beam X-ray transform, pixel driven.

Every pixel centre is projected onto the detector line for each angle in
[0, pi). Its value is split between the neighbouring detector bins with
linear interpolation weights (or sent to the nearest bin). The weights form a
sparse matrix, so back-projection is its exact transpose.
"""

import logging
import math
from functools import lru_cache
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import sparse

from .base import LinearOperator

logger = logging.getLogger(__name__)


class RadonGeometry(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    n_angles: int = Field(..., ge=1)
    n_detectors: int = Field(..., ge=1)
    interpolation: Literal["nearest", "linear"] = "linear"

    @classmethod
    def for_image(cls, image_size: int, n_angles: Optional[int] = None, n_detectors: Optional[int] = None, **kwargs):
        """Defaults: one angle per pixel row, detector covering the image diagonal."""
        return cls(
            n_angles=n_angles or image_size,
            n_detectors=n_detectors or math.ceil(math.sqrt(2) * image_size) + 1,
            **kwargs,
        )

    @property
    def angles(self) -> np.ndarray:
        return np.arange(self.n_angles) * (np.pi / self.n_angles)


@lru_cache(maxsize=16)
def _radon_matrix(image_size: int, n_angles: int, n_detectors: int, interpolation: str) -> sparse.csr_matrix:
    centre = (image_size - 1) / 2.0
    rows, cols = np.mgrid[0:image_size, 0:image_size]
    xs = (cols - centre).ravel()
    ys = (centre - rows).ravel()
    pixel = np.arange(image_size * image_size)
    detector_centre = (n_detectors - 1) / 2.0

    entries_r, entries_c, entries_w = [], [], []
    for a, theta in enumerate(np.arange(n_angles) * (np.pi / n_angles)):
        t = xs * np.cos(theta) + ys * np.sin(theta) + detector_centre
        if interpolation == "nearest":
            bins = [(np.floor(t + 0.5).astype(np.int64), np.ones_like(t))]
        else:
            lower = np.floor(t).astype(np.int64)
            frac = t - lower
            bins = [(lower, 1.0 - frac), (lower + 1, frac)]

        for index, weight in bins:
            keep = (index >= 0) & (index < n_detectors) & (weight != 0.0)
            entries_r.append(a * n_detectors + index[keep])
            entries_c.append(pixel[keep])
            entries_w.append(weight[keep])

    matrix = sparse.coo_matrix(
        (np.concatenate(entries_w), (np.concatenate(entries_r), np.concatenate(entries_c))),
        shape=(n_angles * n_detectors, image_size * image_size),
    ).tocsr()
    logger.debug(
        f"[Radon] built {matrix.shape[0]}x{matrix.shape[1]} projector ({interpolation}, {matrix.nnz} nonzeros)"
    )
    return matrix


def radon_matrix(image_size: int, geometry: RadonGeometry) -> sparse.csr_matrix:
    return _radon_matrix(image_size, geometry.n_angles, geometry.n_detectors, geometry.interpolation)


def _check_square(image: np.ndarray) -> int:
    if image.ndim != 2 or image.shape[0] != image.shape[1]:
        raise ValueError(f"Radon transform needs a square image, got shape {image.shape}")
    return image.shape[0]


def radon_apply(image: np.ndarray, geometry: RadonGeometry) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    size = _check_square(image)
    return (radon_matrix(size, geometry) @ image.ravel()).reshape(geometry.n_angles, geometry.n_detectors)


def radon_backproject(sinogram: np.ndarray, geometry: RadonGeometry, image_size: int) -> np.ndarray:
    sinogram = np.asarray(sinogram, dtype=np.float64)
    if sinogram.shape != (geometry.n_angles, geometry.n_detectors):
        raise ValueError(
            f"sinogram has shape {sinogram.shape}, geometry expects {(geometry.n_angles, geometry.n_detectors)}"
        )
    return (radon_matrix(image_size, geometry).T @ sinogram.ravel()).reshape(image_size, image_size)


class RadonOperator(LinearOperator):
    kind = "tomography"

    def __init__(self, image_size: int, geometry: Optional[RadonGeometry] = None):
        geometry = geometry or RadonGeometry.for_image(image_size)
        super().__init__((image_size, image_size), (geometry.n_angles, geometry.n_detectors))
        self.geometry = geometry
        self.matrix = radon_matrix(image_size, geometry)

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        _check_square(x)
        return super().apply(x)

    def _apply(self, x):
        return (self.matrix @ x.ravel()).reshape(self.output_shape)

    def _adjoint(self, y):
        return (self.matrix.T @ y.ravel()).reshape(self.input_shape)

    def describe(self) -> dict:
        return {**super().describe(), **self.geometry.model_dump()}
