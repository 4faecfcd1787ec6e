# generative/losses.py

"""
Training objectives for the three generators.

All losses are batch means of per-image terms and return scalar Tensors that
join the open tape when parameters requiring gradients are passed in
`params`. Without a tape they are plain evaluations.
"""

import logging
from typing import Dict, Optional, Tuple

import numpy as np

from autodiff.params import ParamSet
from autodiff.tensor import (
    Tape,
    Tensor,
    add,
    as_tensor,
    backward,
    exp,
    log,
    mean_all,
    mul,
    scale,
    square,
    sub,
    sum_all,
    with_gradient,
)

from .networks import DiscriminatorModel, EncoderModel, GeneratorModel, frozen

logger = logging.getLogger(__name__)

# Largest displacement of an interpolate when differencing the critic along the penalty direction.
PENALTY_STEP = 1e-4


def _batch(batch, image_shape) -> Tensor:
    x = as_tensor(batch)
    if x.ndim == 2:
        x = Tensor(x.data[None])
    if x.ndim != 3 or x.shape[0] == 0:
        raise ValueError(f"expected a non-empty batch of images (N, H, W), got shape {x.shape}")
    if tuple(x.shape[1:]) != tuple(image_shape):
        raise ValueError(f"batch images have shape {x.shape[1:]}, models expect {tuple(image_shape)}")
    return x


# ============================================================
#  AUTOENCODER
# ============================================================

def ae_loss(
    batch,
    encoder: EncoderModel,
    generator: GeneratorModel,
    params=None,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """mean_i ||x_i - G(E(x_i))||^2. For a VAE encoder E is the mean head."""
    x = _batch(batch, generator.image_shape)
    z = encoder.forward(x, params=params, training=training, rng=rng)[0]
    recon = generator.forward(z, params=params, training=training, rng=rng)
    return scale(sum_all(square(sub(x, recon))), 1.0 / x.shape[0])


# ============================================================
#  VAE
# ============================================================

def kl_normal(mu, var) -> Tensor:
    """KL(N(mu, diag var) || N(0, I)) = 1/2 sum(mu^2 + var - 1 - log var)."""
    mu, var = as_tensor(mu), as_tensor(var)
    if mu.shape != var.shape:
        raise ValueError(f"kl_normal: mean shape {mu.shape} and variance shape {var.shape} differ")
    if np.any(var.data <= 0):
        raise ValueError("kl_normal needs strictly positive variances")
    terms = sub(sub(add(square(mu), var), 1.0), log(var))
    return scale(sum_all(terms), 0.5)


def kl_from_logvar(mu, logvar) -> Tensor:
    """Same divergence parameterised by log-variance; exp keeps the variance positive."""
    mu, logvar = as_tensor(mu), as_tensor(logvar)
    terms = sub(sub(add(square(mu), exp(logvar)), 1.0), logvar)
    return scale(sum_all(terms), 0.5)


def vae_loss_terms(
    batch,
    encoder: EncoderModel,
    generator: GeneratorModel,
    rho: float,
    seed: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    params=None,
    training: bool = False,
    zero_variance: bool = False,
) -> Tuple[Tensor, Tensor]:
    """
    (reconstruction, kl), both batch means:

        reconstruction = mean_i ||x_i - G(mu_i + sigma_i * eps_i)||^2 / (2 rho^2)
        kl             = mean_i KL(N(mu_i, sigma_i^2) || N(0, I))

    One reparameterised sample per image, eps drawn from `rng` (or a generator
    seeded with `seed`). `zero_variance` decodes the mean itself (sigma forced
    to 0 in the sample); the KL term still uses the encoder's variance.
    """
    if rho <= 0:
        raise ValueError(f"rho must be positive, got {rho}")
    if not encoder.is_variational:
        raise ValueError("vae loss needs an encoder with mean and log-variance heads")

    rng = rng if rng is not None else np.random.default_rng(seed)
    x = _batch(batch, generator.image_shape)
    mu, logvar = encoder.forward(x, params=params, training=training, rng=rng)

    if zero_variance:
        z = mu
    else:
        eps = rng.standard_normal(mu.shape)
        z = add(mu, mul(exp(scale(logvar, 0.5)), eps))

    recon = generator.forward(z, params=params, training=training, rng=rng)
    n = x.shape[0]
    reconstruction = scale(sum_all(square(sub(x, recon))), 1.0 / (2.0 * rho ** 2 * n))
    kl = scale(kl_from_logvar(mu, logvar), 1.0 / n)
    return reconstruction, kl


def vae_loss(batch, encoder, generator, rho: float, seed: Optional[int] = None, **kwargs) -> Tensor:
    reconstruction, kl = vae_loss_terms(batch, encoder, generator, rho, seed=seed, **kwargs)
    return add(reconstruction, kl)


# ============================================================
#  WASSERSTEIN GAN WITH GRADIENT PENALTY
# ============================================================

def critic_input_gradients(critic: DiscriminatorModel, points: np.ndarray, params: Optional[ParamSet] = None) -> np.ndarray:
    """grad_x D(x) for every image of the batch, shape (N, H, W)."""
    constants = frozen(critic.params if params is None else params)
    xt = Tensor(points, requires_grad=True, name="x")
    with Tape() as tape:
        loss = sum_all(critic.forward(xt, params=constants))
    return backward(loss, tape, leaves={"x": xt})["x"].numpy()


def _critic_param_gradients(critic: DiscriminatorModel, params: ParamSet, points: np.ndarray) -> Dict[str, np.ndarray]:
    with Tape() as tape:
        loss = sum_all(critic.forward(Tensor(points), params=params))
    grads = backward(loss, tape, leaves=dict(params))
    return {name: g.numpy() for name, g in grads.items()}


def gradient_penalty(
    critic: DiscriminatorModel,
    points: np.ndarray,
    params: Optional[ParamSet] = None,
) -> Tuple[float, Dict[str, np.ndarray]]:
    """
    GP = mean_i (||grad_x D(x_i)|| - 1)^2 and its gradient with respect to the
    critic parameters.

    With w_i = c_i grad_x D(x_i), c_i = 2(n_i - 1) / (n_i N), the parameter
    gradient is d/dpsi sum_i w_i . grad_x D(x_i), i.e. the parameter gradient of
    the directional derivative of sum_i D along w. That is taken as a central
    difference of first-order parameter gradients at x +- h w.
    """
    params = critic.params if params is None else params
    points = np.asarray(points, dtype=np.float64)
    grads_x = critic_input_gradients(critic, points, params)

    n = points.shape[0]
    norms = np.sqrt(np.sum(grads_x ** 2, axis=tuple(range(1, grads_x.ndim))))
    value = float(np.mean((norms - 1.0) ** 2))

    safe = np.where(norms > 0, norms, 1.0)
    coeff = np.where(norms > 0, 2.0 * (norms - 1.0) / (safe * n), 0.0)
    direction = coeff.reshape((-1,) + (1,) * (grads_x.ndim - 1)) * grads_x

    reach = float(np.max(np.sqrt(np.sum(direction ** 2, axis=tuple(range(1, direction.ndim))))))
    if reach == 0.0:
        return value, {name: np.zeros(t.shape) for name, t in params.items()}

    h = PENALTY_STEP / reach
    plus = _critic_param_gradients(critic, params, points + h * direction)
    minus = _critic_param_gradients(critic, params, points - h * direction)
    return value, {name: (plus[name] - minus[name]) / (2.0 * h) for name in params}


def critic_loss(
    real: np.ndarray,
    fake: np.ndarray,
    critic: DiscriminatorModel,
    gp_weight: float,
    rng: np.random.Generator,
    params: Optional[ParamSet] = None,
) -> Tensor:
    """-(E[D(real)] - E[D(fake)]) + gp_weight * GP on random real/fake interpolates."""
    params = critic.params if params is None else params
    real = _batch(real, critic.image_shape).data
    fake = _batch(fake, critic.image_shape).data
    if real.shape != fake.shape:
        raise ValueError(f"real batch {real.shape} and generated batch {fake.shape} differ")

    eps = rng.uniform(size=(real.shape[0], 1, 1))
    interpolates = eps * real + (1.0 - eps) * fake
    penalty, penalty_grads = gradient_penalty(critic, interpolates, params)

    wasserstein = sub(
        mean_all(critic.forward(Tensor(fake), params=params)),
        mean_all(critic.forward(Tensor(real), params=params)),
    )
    names = list(params)
    penalty_term = with_gradient(
        gp_weight * penalty,
        [params[name] for name in names],
        [gp_weight * penalty_grads[name] for name in names],
        op="gradient_penalty",
    )
    return add(wasserstein, penalty_term)


def generator_loss(z: np.ndarray, generator: GeneratorModel, critic: DiscriminatorModel, params=None) -> Tensor:
    """-E[D(G(z))]; the critic is held fixed."""
    fake = generator.forward(as_tensor(z), params=params)
    return scale(mean_all(critic.forward(fake)), -1.0)


def wgan_losses(
    real,
    generator: GeneratorModel,
    critic: DiscriminatorModel,
    gp_weight: float = 10.0,
    seed: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[Tensor, Tensor]:
    """(critic loss, generator loss) on one real batch and a fresh latent batch of the same size."""
    rng = rng if rng is not None else np.random.default_rng(seed)
    real = _batch(real, generator.image_shape).data
    z = rng.standard_normal((real.shape[0], generator.latent_dim))
    fake = generator.images(z)
    return critic_loss(real, fake, critic, gp_weight, rng), generator_loss(z, generator, critic)
