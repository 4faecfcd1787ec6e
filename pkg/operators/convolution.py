# operators/convolution.py

import logging
from typing import Tuple

import numpy as np
from scipy import ndimage

from .base import LinearOperator

logger = logging.getLogger(__name__)


def gaussian_kernel(size: int = 5, width: float = 1.0) -> np.ndarray:
    """Normalised isotropic Gaussian on a size x size grid centred on the middle pixel."""
    if size < 1 or size % 2 == 0:
        raise ValueError(f"Gaussian kernel size must be a positive odd integer, got {size}")
    if width <= 0:
        raise ValueError(f"Gaussian kernel width must be positive, got {width}")

    offsets = np.arange(size) - size // 2
    profile = np.exp(-(offsets ** 2) / (2.0 * width ** 2))
    kernel = np.outer(profile, profile)
    return kernel / kernel.sum()


def _check_kernel(kernel: np.ndarray, image_shape: Tuple[int, int]) -> np.ndarray:
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 2 or kernel.shape[0] != kernel.shape[1] or kernel.shape[0] % 2 == 0:
        raise ValueError(f"convolution kernel must be square with odd side, got shape {kernel.shape}")
    if kernel.shape[0] > min(image_shape):
        raise ValueError(f"convolution kernel {kernel.shape} is larger than the image {tuple(image_shape)}")
    return kernel


def conv_apply(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """'same'-size convolution with zero padding."""
    image = np.asarray(image, dtype=np.float64)
    kernel = _check_kernel(kernel, image.shape)
    return ndimage.convolve(image, kernel, mode="constant", cval=0.0)


def conv_adjoint(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Adjoint of conv_apply: correlation with the same kernel (convolution with the flipped kernel)."""
    image = np.asarray(image, dtype=np.float64)
    kernel = _check_kernel(kernel, image.shape)
    return ndimage.correlate(image, kernel, mode="constant", cval=0.0)


class ConvolutionOperator(LinearOperator):
    kind = "deconvolution"

    def __init__(self, kernel: np.ndarray, image_shape: Tuple[int, int]):
        super().__init__(image_shape, image_shape)
        self.kernel = _check_kernel(kernel, image_shape).copy()
        self.kernel.setflags(write=False)

    def _apply(self, x):
        return conv_apply(x, self.kernel)

    def _adjoint(self, y):
        return conv_adjoint(y, self.kernel)

    def describe(self) -> dict:
        return {**super().describe(), "kernel_size": int(self.kernel.shape[0])}
