# generative/architectures.py

"""
Desk-scale architectures. All three model kinds share one generator network
per dataset; encoders and the critic mirror it with strided convolutions.
These are CPU-sized adaptations, not replicas of full-size networks.
"""

from typing import List, Literal, Tuple

from pydantic import BaseModel, ConfigDict, Field

from autodiff.layers import LayerSpec, output_shape

ModelKind = Literal["ae", "vae", "gan"]

GENERATOR_KINDS = {
    "ae": "ae-decoder",
    "vae": "vae-decoder",
    "gan": "gan-generator",
}


class Architecture(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str
    kind: ModelKind
    image_shape: Tuple[int, int]
    latent_dim: int = Field(..., ge=1)
    generator: List[LayerSpec]
    encoder: List[LayerSpec] = []
    encoder_heads: List[LayerSpec] = []  # AE: [z]; VAE: [mu, logvar]
    discriminator: List[LayerSpec] = []


def generator_layers(latent_dim: int, image_size: int, channels=(32, 16, 8), alpha: float = 0.2) -> List[LayerSpec]:
    if image_size % 4:
        raise ValueError(f"image_size must be divisible by 4, got {image_size}")
    s = image_size // 4
    c0, c1, c2 = channels
    return [
        LayerSpec(kind="dense", name="gen.fc", in_features=latent_dim, out_features=c0 * s * s),
        LayerSpec(kind="leaky_relu", alpha=alpha),
        LayerSpec(kind="reshape", shape=(c0, s, s)),
        LayerSpec(kind="conv_transpose2d", name="gen.up1", in_channels=c0, out_channels=c1, kernel_size=3, stride=2),
        LayerSpec(kind="leaky_relu", alpha=alpha),
        LayerSpec(kind="conv_transpose2d", name="gen.up2", in_channels=c1, out_channels=c2, kernel_size=3, stride=2),
        LayerSpec(kind="leaky_relu", alpha=alpha),
        LayerSpec(kind="conv2d", name="gen.out", in_channels=c2, out_channels=1, kernel_size=3),
        LayerSpec(kind="sigmoid"),
        LayerSpec(kind="reshape", shape=(image_size, image_size)),
    ]


def _trunk(prefix: str, image_size: int, channels=(8, 16), hidden: int = 64, alpha: float = 0.2, dropout: float = 0.0) -> List[LayerSpec]:
    s = image_size // 4
    c1, c2 = channels
    layers = [
        LayerSpec(kind="reshape", shape=(1, image_size, image_size)),
        LayerSpec(kind="conv2d", name=f"{prefix}.conv1", in_channels=1, out_channels=c1, kernel_size=3, stride=2),
        LayerSpec(kind="leaky_relu", alpha=alpha),
    ]
    if dropout > 0:
        layers.append(LayerSpec(kind="dropout", p=dropout))
    layers += [
        LayerSpec(kind="conv2d", name=f"{prefix}.conv2", in_channels=c1, out_channels=c2, kernel_size=3, stride=2),
        LayerSpec(kind="leaky_relu", alpha=alpha),
        LayerSpec(kind="reshape", shape=(c2 * s * s,)),
        LayerSpec(kind="dense", name=f"{prefix}.fc", in_features=c2 * s * s, out_features=hidden),
        LayerSpec(kind="leaky_relu", alpha=alpha),
    ]
    return layers


def build_architecture(
    kind: ModelKind,
    image_size: int,
    latent_dim: int,
    alpha: float = 0.2,
    dropout: float = 0.1,
    name: str = "",
) -> Architecture:
    hidden = 64
    gen = generator_layers(latent_dim, image_size, alpha=alpha)
    encoder, heads, critic = [], [], []

    if kind == "ae":
        encoder = _trunk("enc", image_size, hidden=hidden, alpha=alpha, dropout=dropout)
        heads = [LayerSpec(kind="dense", name="enc.z", in_features=hidden, out_features=latent_dim)]
    elif kind == "vae":
        encoder = _trunk("enc", image_size, hidden=hidden, alpha=alpha, dropout=dropout)
        heads = [
            LayerSpec(kind="dense", name="enc.mu", in_features=hidden, out_features=latent_dim),
            LayerSpec(kind="dense", name="enc.logvar", in_features=hidden, out_features=latent_dim),
        ]
    elif kind == "gan":
        critic = _trunk("disc", image_size, hidden=hidden, alpha=alpha) + [
            LayerSpec(kind="dense", name="disc.out", in_features=hidden, out_features=1),
        ]
    else:
        raise ValueError(f"unknown model kind: {kind}")

    arch = Architecture(
        name=name or f"{kind}-{image_size}px-z{latent_dim}",
        kind=kind,
        image_shape=(image_size, image_size),
        latent_dim=latent_dim,
        generator=gen,
        encoder=encoder,
        encoder_heads=heads,
        discriminator=critic,
    )

    produced = output_shape(arch.generator, (latent_dim,))
    if produced != arch.image_shape:
        raise ValueError(f"generator of {arch.name} produces {produced}, expected {arch.image_shape}")
    return arch


# Latent dimensions used for the two datasets.
DEFAULT_LATENT_DIM = {"mnist": 8, "shapes": 10, "shapes+": 10}
