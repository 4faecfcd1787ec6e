# operators/sensing.py

import logging
from typing import Optional, Tuple, Union

import numpy as np

from .base import LinearOperator

logger = logging.getLogger(__name__)


class GaussianSensingOperator(LinearOperator):
    """y = M vec(x) with M of shape (m, n). The matrix is rebuilt from (m, n, seed) and never stored."""

    kind = "compressed-sensing"

    def __init__(self, matrix: np.ndarray, image_shape: Tuple[int, ...], seed: Optional[int] = None):
        matrix = np.array(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[1] != int(np.prod(image_shape)):
            raise ValueError(f"sensing matrix {matrix.shape} does not match images of shape {tuple(image_shape)}")
        super().__init__(image_shape, (matrix.shape[0],))
        matrix.setflags(write=False)
        self.matrix = matrix
        self.seed = seed

    @property
    def m(self) -> int:
        return self.matrix.shape[0]

    def _apply(self, x):
        return self.matrix @ x.reshape(-1)

    def _adjoint(self, y):
        return (self.matrix.T @ y).reshape(self.input_shape)

    def describe(self) -> dict:
        return {**super().describe(), "m": self.m, "seed": self.seed}


def gaussian_sensing(
    m: int,
    image_shape: Union[int, Tuple[int, ...]],
    seed: int = 0,
    matrix: Optional[np.ndarray] = None,
) -> GaussianSensingOperator:
    """
    Entries i.i.d. N(0, 1/m) drawn from a generator seeded with `seed`.
    `matrix` overrides the random draw (tests use the identity).
    """
    if isinstance(image_shape, int):
        image_shape = (image_shape,)
    n = int(np.prod(image_shape))
    if m < 1 or n < 1:
        raise ValueError(f"sensing needs m >= 1 and n >= 1, got m={m}, n={n}")

    if matrix is None:
        rng = np.random.default_rng(seed)
        matrix = rng.standard_normal((m, n)) / np.sqrt(m)
    elif np.shape(matrix) != (m, n):
        raise ValueError(f"override matrix has shape {np.shape(matrix)}, expected {(m, n)}")

    logger.debug(f"[Operators] Gaussian sensing matrix {m}x{n} (seed={seed})")
    return GaussianSensingOperator(matrix, image_shape, seed=seed)
