# generative/store.py

"""
Model checkpoints: every network's parameters in one GRG1 tensor file
(`model.grg`, names are prefixed gen./enc./disc. so they never collide) plus
a JSON sidecar (`model.json`) with kind, latent_dim, architecture descriptor,
train config echo and loss history.
"""

import hashlib
import logging
from pathlib import Path

from autodiff.checkpoint import load_tensors, save_tensors
from autodiff.params import ParamSet
from genreg.storage import read_json, write_json

from .architectures import GENERATOR_KINDS, Architecture
from .networks import DiscriminatorModel, EncoderModel, GeneratorModel
from .training import TrainConfig, TrainedModels

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "model.grg"
SIDECAR_NAME = "model.json"


def _param_names(layers):
    names = []
    for layer in layers:
        names.extend(layer.param_shapes())
    return names


def _params_for(layers, tensors, source) -> ParamSet:
    values = {}
    for name in _param_names(layers):
        if name not in tensors:
            raise ValueError(f"{source}: checkpoint has no tensor '{name}'")
        values[name] = tensors[name]
    return ParamSet(values)


def save_models(trained: TrainedModels, directory) -> Path:
    directory = Path(directory)
    tensors = {}
    for network in trained.networks():
        tensors.update(network.params.arrays())

    path = save_tensors(directory / CHECKPOINT_NAME, tensors)
    write_json(
        directory / SIDECAR_NAME,
        {
            "kind": trained.kind,
            "generator_kind": GENERATOR_KINDS[trained.kind],
            "latent_dim": trained.architecture.latent_dim,
            "architecture": trained.architecture.model_dump(mode="json"),
            "train_config": trained.config.model_dump(mode="json"),
            "history": trained.history,
            "final_losses": trained.final_losses,
            "checkpoint_sha256": hashlib.sha256(path.read_bytes()).hexdigest(),
        },
    )
    logger.info(f"[Store] saved {trained.kind} checkpoint ({len(tensors)} tensors) to {path}")
    return path


def load_models(directory) -> TrainedModels:
    directory = Path(directory)
    sidecar = read_json(directory / SIDECAR_NAME)
    checkpoint_path = directory / CHECKPOINT_NAME
    tensors = load_tensors(checkpoint_path)
    architecture = Architecture.model_validate(sidecar["architecture"])

    generator = GeneratorModel(_params_for(architecture.generator, tensors, checkpoint_path), architecture)
    encoder = None
    if architecture.encoder:
        layers = architecture.encoder + architecture.encoder_heads
        encoder = EncoderModel(_params_for(layers, tensors, checkpoint_path), architecture)
    critic = None
    if architecture.discriminator:
        critic = DiscriminatorModel(_params_for(architecture.discriminator, tensors, checkpoint_path), architecture)

    logger.info(f"[Store] loaded {architecture.kind} checkpoint from {checkpoint_path}")
    return TrainedModels(
        kind=sidecar["kind"],
        architecture=architecture,
        generator=generator,
        config=TrainConfig.model_validate(sidecar["train_config"]),
        encoder=encoder,
        critic=critic,
        history=sidecar.get("history", []),
    )
