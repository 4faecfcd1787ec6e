# operators/problems.py

import logging
from typing import Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field

from .base import IdentityOperator, LinearOperator
from .convolution import ConvolutionOperator, gaussian_kernel
from .noise import NoiseModel
from .radon import RadonGeometry, RadonOperator
from .sensing import gaussian_sensing

logger = logging.getLogger(__name__)

ProblemKind = Literal["deconvolution", "compressed-sensing", "tomography", "denoising"]

# Noise levels of the reference experiments.
DEFAULT_SIGMA = {
    "deconvolution": 0.1,
    "compressed-sensing": 0.05,
    "tomography": 0.1,
    "denoising": 0.1,
}


class ProblemConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: ProblemKind = "deconvolution"
    sigma: Optional[float] = Field(None, ge=0.0)
    noise_seed: int = 0

    # deconvolution
    kernel_size: int = Field(5, ge=1)
    kernel_width: float = Field(1.0, gt=0)

    # compressed sensing
    measurements: int = Field(150, ge=1)
    matrix_seed: int = 0

    # tomography
    n_angles: Optional[int] = Field(None, ge=1)
    n_detectors: Optional[int] = Field(None, ge=1)
    interpolation: Literal["nearest", "linear"] = "linear"

    @property
    def noise_sigma(self) -> float:
        return DEFAULT_SIGMA[self.kind] if self.sigma is None else self.sigma

    def noise_model(self, image_index: int = 0) -> NoiseModel:
        return NoiseModel(sigma=self.noise_sigma, seed=self.noise_seed + image_index)


def build_operator(problem: ProblemConfig, image_shape: Tuple[int, int]) -> LinearOperator:
    if problem.kind == "deconvolution":
        operator = ConvolutionOperator(gaussian_kernel(problem.kernel_size, problem.kernel_width), image_shape)
    elif problem.kind == "compressed-sensing":
        operator = gaussian_sensing(problem.measurements, tuple(image_shape), seed=problem.matrix_seed)
    elif problem.kind == "tomography":
        if image_shape[0] != image_shape[1]:
            raise ValueError(f"tomography needs square images, got {tuple(image_shape)}")
        geometry = RadonGeometry.for_image(
            image_shape[0],
            n_angles=problem.n_angles,
            n_detectors=problem.n_detectors,
            interpolation=problem.interpolation,
        )
        operator = RadonOperator(image_shape[0], geometry)
    else:
        operator = IdentityOperator(image_shape)

    logger.info(f"[Operators] {problem.kind}: {operator.input_shape} -> {operator.output_shape}")
    return operator
