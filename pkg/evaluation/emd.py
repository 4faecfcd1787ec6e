# evaluation/emd.py

"""
Earth mover's distance between two equally sized image sets under the squared
Euclidean ground cost. With uniform weights on N points each, the transport
polytope's vertices are permutation matrices, so the exact optimum is an
assignment problem.
"""

import logging

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

logger = logging.getLogger(__name__)


def _flatten(images, what: str) -> np.ndarray:
    images = np.asarray(images, dtype=np.float64)
    if images.ndim < 2:
        raise ValueError(f"{what} must be a stack of images, got shape {images.shape}")
    return images.reshape(images.shape[0], -1)


def cost_matrix(set_a, set_b) -> np.ndarray:
    a = _flatten(set_a, "first set")
    b = _flatten(set_b, "second set")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"image sizes differ: {a.shape[1]} vs {b.shape[1]} pixels")
    return cdist(a, b, metric="sqeuclidean")


def emd(set_a, set_b) -> float:
    """min over permutations s of (1/N) sum_i ||a_i - b_s(i)||^2."""
    a = _flatten(set_a, "first set")
    b = _flatten(set_b, "second set")
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"EMD needs equally sized sets, got {a.shape[0]} and {b.shape[0]}")
    if a.shape[0] == 0:
        raise ValueError("EMD needs at least one image per set")

    cost = cost_matrix(a, b)
    rows, cols = linear_sum_assignment(cost)
    value = float(cost[rows, cols].mean())
    logger.debug(f"[EMD] N={a.shape[0]} value={value:.6g}")
    return value
