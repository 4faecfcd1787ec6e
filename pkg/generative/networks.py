# generative/networks.py

import logging
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from autodiff.layers import PARAMETRIC, LayerSpec, apply_layer, init_layer_params
from autodiff.params import ParamSet
from autodiff.tensor import Tape, Tensor, as_tensor, backward, mul, record, sum_all

from .architectures import GENERATOR_KINDS, Architecture

logger = logging.getLogger(__name__)


def init_params(layers: Sequence[LayerSpec], rng: np.random.Generator) -> ParamSet:
    values = {}
    for layer in layers:
        if layer.kind in PARAMETRIC:
            values.update(init_layer_params(layer, rng))
    return ParamSet(values)


def run_layers(
    x: Tensor,
    layers: Sequence[LayerSpec],
    params: Mapping[str, Tensor],
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    for layer in layers:
        x = apply_layer(x, layer, params, training=training, rng=rng)
    return x


def frozen(params: ParamSet) -> Dict[str, Tensor]:
    """Constant copies of the parameters, so inference never records weight gradients."""
    return {name: Tensor(params[name].data, name=name) for name in params}


class _Network:
    def __init__(self, params: ParamSet, layers: Sequence[LayerSpec], architecture: Architecture):
        self.params = params
        self.layers = list(layers)
        self.architecture = architecture
        self._frozen = None

    @property
    def latent_dim(self) -> int:
        return self.architecture.latent_dim

    @property
    def image_shape(self) -> Tuple[int, int]:
        return tuple(self.architecture.image_shape)

    def constants(self) -> Dict[str, Tensor]:
        if self._frozen is None:
            self._frozen = frozen(self.params)
        return self._frozen

    def _resolve(self, params):
        return self.constants() if params is None else params


# ============================================================
#  GENERATOR
# ============================================================

class GeneratorModel(_Network):
    """G: Z -> X, (N, latent_dim) -> (N, H, W), final sigmoid keeps outputs in [0, 1]."""

    def __init__(self, params: ParamSet, architecture: Architecture):
        super().__init__(params, architecture.generator, architecture)

    @property
    def kind(self) -> str:
        return GENERATOR_KINDS[self.architecture.kind]

    def with_params(self, params: ParamSet) -> "GeneratorModel":
        return GeneratorModel(params, self.architecture)

    def forward(self, z: Tensor, params=None, training: bool = False, rng=None) -> Tensor:
        if z.ndim != 2 or z.shape[1] != self.latent_dim:
            raise ValueError(f"generator expects latents of shape (N, {self.latent_dim}), got {z.shape}")
        return run_layers(z, self.layers, self._resolve(params), training=training, rng=rng)

    def images(self, latents: np.ndarray) -> np.ndarray:
        """Inference on a batch of latents (N, d) -> (N, H, W)."""
        latents = np.atleast_2d(np.asarray(latents, dtype=np.float64))
        return self.forward(Tensor(latents)).numpy()

    def image(self, z: np.ndarray) -> np.ndarray:
        return self.images(np.asarray(z, dtype=np.float64)[None, :])[0]

    def value_and_pullback(self, z: np.ndarray, cotangent_fn):
        """
        Evaluate x = G(z) for one latent, then J_G(z)^T c with c = cotangent_fn(x).
        Returns (x, c, J^T c). Solvers build every latent gradient from this:
        d/dz h(G(z)) = J^T grad h(G(z)).
        """
        z = np.asarray(z, dtype=np.float64)
        zt = Tensor(z[None, :], requires_grad=True, name="z")
        with Tape() as tape:
            x = self.forward(zt)
            c = np.asarray(cotangent_fn(x.numpy()[0]), dtype=np.float64)
            loss = sum_all(mul(x, c[None]))
        grads = backward(loss, tape, leaves={"z": zt})
        return x.numpy()[0], c, grads["z"].numpy()[0]


def generate(generator: GeneratorModel, z) -> Tensor:
    """G(z) for one latent vector; differentiable in z when z requires gradients and a tape is open."""
    zt = as_tensor(z)
    if zt.size != generator.latent_dim:
        raise ValueError(f"latent has {zt.size} entries, generator expects {generator.latent_dim}")
    row = record("reshape", zt.data.reshape(1, -1), (zt,), lambda g: (g.reshape(zt.shape),))
    out = generator.forward(row)
    return record("reshape", out.data[0], (out,), lambda g: (g[None],))


# ============================================================
#  ENCODER
# ============================================================

class EncoderModel(_Network):
    """E: X -> Z. AE: one head; VAE: mean and log-variance heads (variance = exp(logvar) > 0)."""

    def __init__(self, params: ParamSet, architecture: Architecture):
        super().__init__(params, architecture.encoder, architecture)
        self.heads: List[LayerSpec] = list(architecture.encoder_heads)

    @property
    def is_variational(self) -> bool:
        return len(self.heads) == 2

    def with_params(self, params: ParamSet) -> "EncoderModel":
        return EncoderModel(params, self.architecture)

    def forward(self, x: Tensor, params=None, training: bool = False, rng=None) -> Tuple[Tensor, ...]:
        if tuple(x.shape[1:]) != self.image_shape:
            raise ValueError(f"encoder expects images of shape (N, {self.image_shape}), got {x.shape}")
        params = self._resolve(params)
        features = run_layers(x, self.layers, params, training=training, rng=rng)
        return tuple(apply_layer(features, head, params) for head in self.heads)

    def encode(self, images: np.ndarray) -> np.ndarray:
        """Deterministic encoding: E(x) for the AE, the mean mu(x) for the VAE. Accepts (H, W) or (N, H, W)."""
        images = np.asarray(images, dtype=np.float64)
        single = images.ndim == 2
        batch = images[None] if single else images
        out = self.forward(Tensor(batch))[0].numpy()
        return out[0] if single else out


# ============================================================
#  DISCRIMINATOR
# ============================================================

class DiscriminatorModel(_Network):
    """Critic D: X -> R, one scalar per image."""

    def __init__(self, params: ParamSet, architecture: Architecture):
        super().__init__(params, architecture.discriminator, architecture)

    def with_params(self, params: ParamSet) -> "DiscriminatorModel":
        return DiscriminatorModel(params, self.architecture)

    def forward(self, x: Tensor, params=None, training: bool = False, rng=None) -> Tensor:
        if tuple(x.shape[1:]) != self.image_shape:
            raise ValueError(f"critic expects images of shape (N, {self.image_shape}), got {x.shape}")
        out = run_layers(x, self.layers, self._resolve(params), training=training, rng=rng)
        if out.ndim != 2 or out.shape[1] != 1:
            raise ValueError(f"critic must output one scalar per image, got shape {out.shape}")
        return out

    def scores(self, images: np.ndarray) -> np.ndarray:
        return self.forward(Tensor(np.asarray(images, dtype=np.float64))).numpy()[:, 0]


def build_models(architecture: Architecture, seed: int):
    """Freshly initialised (generator, encoder or None, discriminator or None)."""
    rng = np.random.default_rng([seed, 17])
    generator = GeneratorModel(init_params(architecture.generator, rng), architecture)

    encoder = None
    if architecture.encoder:
        encoder = EncoderModel(init_params(architecture.encoder + architecture.encoder_heads, rng), architecture)

    critic = None
    if architecture.discriminator:
        critic = DiscriminatorModel(init_params(architecture.discriminator, rng), architecture)

    return generator, encoder, critic
