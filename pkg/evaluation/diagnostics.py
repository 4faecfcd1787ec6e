# evaluation/diagnostics.py

"""Generator diagnostics: reconstruction by latent optimisation, latent projections, interpolation and far-from-prior samples."""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from generative.networks import EncoderModel, GeneratorModel
from solvers.backtracking import StoppingRule
from solvers.methods import project_to_range

from .metrics import nrmse

logger = logging.getLogger(__name__)

DEFAULT_ALPHAS = (0.0, 0.25, 0.5, 0.75, 1.0)


@dataclass
class Encoding:
    z: np.ndarray
    image: np.ndarray
    nrmse: float
    initial_nrmse: float
    restart: int = 0
    restart_nrmse: List[float] = field(default_factory=list)


def encode_by_optimization(
    x: np.ndarray,
    generator: GeneratorModel,
    encoder: Optional[EncoderModel] = None,
    restarts: Optional[int] = None,
    seed: int = 0,
    z0: Optional[np.ndarray] = None,
    stopping: Optional[StoppingRule] = None,
) -> Encoding:
    """
    argmin_z ||G(z) - x||^2 by backtracking gradient descent.

    Restart 0 starts at z0 when given, else at the (mean) encoding when an
    encoder is given, else at a standard-normal draw; restart k > 0 draws from
    seed + k. Default restarts: 4 without an encoder, 1 with one.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != tuple(generator.image_shape):
        raise ValueError(f"image has shape {x.shape}, generator produces {tuple(generator.image_shape)}")
    if restarts is None:
        restarts = 1 if (encoder is not None or z0 is not None) else 4
    stopping = stopping or StoppingRule(max_iter=500)

    runs = []
    for k in range(restarts):
        if k == 0 and z0 is not None:
            start = np.asarray(z0, dtype=np.float64)
        elif k == 0 and encoder is not None:
            start = np.asarray(encoder.encode(x), dtype=np.float64)
        else:
            start = np.random.default_rng(seed + k).standard_normal(generator.latent_dim)

        z, trace = project_to_range(generator, x, start, stopping=stopping, label="encode")
        runs.append((trace.objective[-1], k, z, nrmse(generator.image(start), x)))

    finals = [run[0] for run in runs]
    best = int(np.argmin(finals))
    _, k, z, initial = runs[best]
    image = generator.image(z)
    return Encoding(
        z=z,
        image=image,
        nrmse=nrmse(image, x),
        initial_nrmse=initial,
        restart=k,
        restart_nrmse=[nrmse(generator.image(run[2]), x) for run in runs],
    )


def latent_projection_2d(
    latents,
    reference,
    seed: int = 0,
    projection: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Project both point sets with one shared d x 2 Gaussian matrix (entries
    N(0, 1/d)), so comparisons between models use the same axes.
    Returns (projected latents, projected reference, matrix).
    """
    latents = np.atleast_2d(np.asarray(latents, dtype=np.float64))
    reference = np.atleast_2d(np.asarray(reference, dtype=np.float64))
    d = latents.shape[1]
    if reference.shape[1] != d:
        raise ValueError(f"latent dimensions differ: {d} vs {reference.shape[1]}")

    if projection is None:
        projection = np.random.default_rng(seed).standard_normal((d, 2)) / np.sqrt(d)
    projection = np.asarray(projection, dtype=np.float64)
    if projection.shape != (d, 2):
        raise ValueError(f"projection must have shape {(d, 2)}, got {projection.shape}")

    return latents @ projection, reference @ projection, projection


def interpolation_grid(
    generator: GeneratorModel,
    z1,
    z2,
    z3,
    alphas: Sequence[float] = DEFAULT_ALPHAS,
) -> np.ndarray:
    """
    (n, n, H, W) grid with entry [i, j] = G(z1 + a_i (z2 - z1) + a_j (z3 - z1)),
    evaluated as (1 - a_i - a_j) z1 + a_i z2 + a_j z3 so the corners are exact.
    """
    z1, z2, z3 = (np.asarray(z, dtype=np.float64) for z in (z1, z2, z3))
    if not (z1.shape == z2.shape == z3.shape == (generator.latent_dim,)):
        raise ValueError(f"latents must all have shape ({generator.latent_dim},)")

    latents = np.array([(1.0 - a - b) * z1 + a * z2 + b * z3 for a in alphas for b in alphas])
    n = len(alphas)
    return generator.images(latents).reshape((n, n) + tuple(generator.image_shape))


def sample_far_from_prior(generator: GeneratorModel, radius: float, count: int, seed: int = 0):
    """Latents radius * (uniform random unit direction) and their images."""
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    if count < 1:
        raise ValueError(f"count must be at least 1, got {count}")

    directions = np.random.default_rng(seed).standard_normal((count, generator.latent_dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    latents = radius * directions
    logger.debug(f"[Diagnostics] {count} samples at radius {radius:g}")
    return latents, generator.images(latents)
