# generative/training.py

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from autodiff.params import ParamSet, adam_step
from autodiff.tensor import Tape, Tensor, add, backward
from datasets.shapes import Dataset, iterate_batches
from genreg.exceptions import NumericalAbort

from .architectures import DEFAULT_LATENT_DIM, Architecture, ModelKind, build_architecture
from .losses import ae_loss, critic_loss, generator_loss, vae_loss_terms
from .networks import DiscriminatorModel, EncoderModel, GeneratorModel, build_models, frozen

logger = logging.getLogger(__name__)


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    epochs: int = Field(20, ge=0)
    batch_size: int = Field(64, ge=1)
    lr: float = Field(1e-3, gt=0)
    beta1: float = Field(0.9, gt=0, lt=1)
    beta2: float = Field(0.999, gt=0, lt=1)
    seed: int = 0

    # VAE decoder noise level
    rho: float = Field(0.1, gt=0)

    # WGAN-GP
    gp_weight: float = Field(10.0, gt=0)
    critic_steps: int = Field(5, ge=1)


@dataclass
class TrainedModels:
    kind: str
    architecture: Architecture
    generator: GeneratorModel
    config: TrainConfig
    encoder: Optional[EncoderModel] = None
    critic: Optional[DiscriminatorModel] = None
    history: List[Dict[str, float]] = field(default_factory=list)

    def networks(self):
        return [m for m in (self.generator, self.encoder, self.critic) if m is not None]

    @property
    def final_losses(self) -> Dict[str, float]:
        return dict(self.history[-1]) if self.history else {}


def _check_finite(kind: str, loss: Tensor, epoch: int, batch_index: int, what: str = "loss"):
    value = loss.item()
    if not np.isfinite(value):
        logger.error(f"[Train] {kind} {what} is {value} at epoch {epoch}, batch {batch_index}")
        raise NumericalAbort(f"{kind} {what} became {value} at epoch {epoch}, batch {batch_index}")


def _adam(params: ParamSet, grads, config: TrainConfig) -> ParamSet:
    return adam_step(params, grads, lr=config.lr, beta1=config.beta1, beta2=config.beta2)


# ============================================================
#  AE / VAE
# ============================================================

def _train_autoencoder(kind, dataset, config, generator, encoder, rng):
    params = encoder.params.merged(generator.params)
    history = []

    for epoch in range(1, config.epochs + 1):
        totals = defaultdict(float)

        for batch_index, batch in enumerate(iterate_batches(dataset, config.batch_size, rng)):
            with Tape() as tape:
                if kind == "ae":
                    loss = ae_loss(batch, encoder, generator, params=params, training=True, rng=rng)
                    terms = {"loss": loss}
                else:
                    reconstruction, kl = vae_loss_terms(
                        batch, encoder, generator, config.rho, rng=rng, params=params, training=True
                    )
                    loss = add(reconstruction, kl)
                    terms = {"loss": loss, "reconstruction": reconstruction, "kl": kl}

            _check_finite(kind, loss, epoch, batch_index)
            grads = backward(loss, tape, leaves=dict(params))
            params = _adam(params, grads, config)

            for name, term in terms.items():
                totals[name] += term.item() * len(batch)

        record = {"epoch": epoch, **{name: total / len(dataset) for name, total in totals.items()}}
        history.append(record)
        logger.info(f"[Train] {kind} epoch {epoch}/{config.epochs} loss={record['loss']:.6g}")

    encoder = encoder.with_params(params.subset(encoder.params))
    generator = generator.with_params(params.subset(generator.params))
    return generator, encoder, history


# ============================================================
#  WGAN-GP
# ============================================================

def _train_wgan(dataset, config, generator, critic, rng):
    gen_params, critic_params = generator.params, critic.params
    history = []
    critic_updates = 0

    for epoch in range(1, config.epochs + 1):
        totals = defaultdict(float)
        generator_batches = 0

        for batch_index, real in enumerate(iterate_batches(dataset, config.batch_size, rng)):
            n = len(real)
            z = rng.standard_normal((n, generator.latent_dim))
            fake = generator.forward(Tensor(z), params=frozen(gen_params)).numpy()

            with Tape() as tape:
                c_loss = critic_loss(real, fake, critic, config.gp_weight, rng, params=critic_params)
            _check_finite("gan", c_loss, epoch, batch_index, what="critic loss")
            grads = backward(c_loss, tape, leaves=dict(critic_params))
            critic_params = _adam(critic_params, grads, config)
            critic_updates += 1
            totals["critic"] += c_loss.item() * n

            if critic_updates % config.critic_steps:
                continue

            z = rng.standard_normal((n, generator.latent_dim))
            current_critic = critic.with_params(critic_params)
            with Tape() as tape:
                g_loss = generator_loss(z, generator, current_critic, params=gen_params)
            _check_finite("gan", g_loss, epoch, batch_index, what="generator loss")
            grads = backward(g_loss, tape, leaves=dict(gen_params))
            gen_params = _adam(gen_params, grads, config)
            totals["generator"] += g_loss.item()
            generator_batches += 1

        record = {
            "epoch": epoch,
            "critic": totals["critic"] / len(dataset),
            "generator": totals["generator"] / generator_batches if generator_batches else float("nan"),
        }
        record["loss"] = record["critic"]
        history.append(record)
        logger.info(
            f"[Train] gan epoch {epoch}/{config.epochs} critic={record['critic']:.6g} "
            f"generator={record['generator']:.6g}"
        )

    return generator.with_params(gen_params), critic.with_params(critic_params), history


# ============================================================
#  ENTRY POINT
# ============================================================

def default_architecture(kind: ModelKind, dataset: Dataset, latent_dim: Optional[int] = None, **kwargs) -> Architecture:
    h, w = dataset.image_shape
    if h != w:
        raise ValueError(f"architectures need square images, dataset has {dataset.image_shape}")
    latent_dim = latent_dim or DEFAULT_LATENT_DIM.get(dataset.provenance, 10)
    return build_architecture(kind, h, latent_dim, **kwargs)


def train(
    kind: ModelKind,
    dataset: Dataset,
    config: TrainConfig,
    architecture: Optional[Architecture] = None,
) -> TrainedModels:
    """
    Train an AE, VAE or WGAN-GP on `dataset`. Deterministic given
    `config.seed`: initial weights, shuffling, dropout masks, latent draws
    and interpolation weights all come from seeded generators.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")

    architecture = architecture or default_architecture(kind, dataset)
    if architecture.kind != kind:
        raise ValueError(f"architecture {architecture.name} is for '{architecture.kind}', asked to train '{kind}'")
    if tuple(architecture.image_shape) != tuple(dataset.image_shape):
        raise ValueError(
            f"architecture {architecture.name} expects {architecture.image_shape} images, "
            f"dataset has {dataset.image_shape}"
        )

    generator, encoder, critic = build_models(architecture, config.seed)
    rng = np.random.default_rng([config.seed, 1])
    logger.info(
        f"[Train] {kind} on {len(dataset)} {dataset.provenance} images, latent_dim={architecture.latent_dim}, "
        f"epochs={config.epochs}, batch_size={config.batch_size}"
    )

    if kind in ("ae", "vae"):
        generator, encoder, history = _train_autoencoder(kind, dataset, config, generator, encoder, rng)
    else:
        generator, critic, history = _train_wgan(dataset, config, generator, critic, rng)

    return TrainedModels(
        kind=kind,
        architecture=architecture,
        generator=generator,
        config=config,
        encoder=encoder,
        critic=critic,
        history=history,
    )
