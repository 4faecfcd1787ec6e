# operators/noise.py

import math

import numpy as np
from pydantic import BaseModel, ConfigDict, Field


class NoiseModel(BaseModel):
    """Zero-mean Gaussian noise of standard deviation sigma, drawn from a seeded generator."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    sigma: float = Field(0.0, ge=0.0)
    seed: int = 0


def add_noise(data, noise: NoiseModel) -> np.ndarray:
    data = np.asarray(data, dtype=np.float64)
    if noise.sigma == 0.0:
        return data.copy()
    rng = np.random.default_rng(noise.seed)
    return data + noise.sigma * rng.standard_normal(data.shape)


def morozov_target(noise: NoiseModel, m: int) -> float:
    """sqrt(E||sigma eps||^2) = sigma sqrt(m) for m data entries."""
    if m < 1:
        raise ValueError(f"data dimension must be at least 1, got {m}")
    return noise.sigma * math.sqrt(m)
