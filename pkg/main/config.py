# main/config.py

"""
Experiment files: one JSON document per experiment, validated with unknown
keys rejected. Flags beat the file, the file beats the environment defaults
in settings.
"""

import json
import logging
from pathlib import Path
from typing import List, Literal, Optional

from django.conf import settings
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from generative.architectures import ModelKind
from generative.training import TrainConfig
from genreg.exceptions import ConfigError
from genreg.storage import write_json
from operators.problems import ProblemConfig
from solvers.methods import InitPolicy, Method

logger = logging.getLogger(__name__)

DatasetKind = Literal["shapes", "shapes-plus", "mnist"]
Split = Literal["train", "test", "tune"]

# (train, test) images per kind when the experiment file leaves them out.
DEFAULT_COUNTS = {"shapes": (4000, 500), "shapes-plus": (4000, 500), "mnist": (10000, 1000)}


class DatasetSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: DatasetKind = "shapes"
    image_size: int = Field(32, ge=16)
    train_count: Optional[int] = Field(None, ge=1)
    test_count: Optional[int] = Field(None, ge=1)
    tune_count: int = Field(20, ge=1)
    intensity_low: float = Field(0.4, gt=0.0, le=1.0)
    intensity_high: float = Field(0.9, gt=0.0, le=1.0)

    # Shapes+ training images carry the bright spot only when set.
    spot_in_train: bool = False

    # MNIST IDX directory; settings.GENREG_MNIST_DIR when unset
    path: Optional[str] = None

    def count(self, split: Split) -> int:
        train, test = DEFAULT_COUNTS[self.kind]
        if split == "train":
            return self.train_count if self.train_count is not None else train
        if split == "test":
            return self.test_count if self.test_count is not None else test
        if split == "tune":
            return self.tune_count
        raise ValueError(f"unknown split '{split}'")

    def bright_spot(self, split: Split) -> bool:
        return self.kind == "shapes-plus" and (split != "train" or self.spot_in_train)


class ModelSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: ModelKind = "ae"
    latent_dim: Optional[int] = Field(None, ge=1)
    alpha: float = Field(0.2, ge=0.0)
    dropout: float = Field(0.1, ge=0.0, lt=1.0)
    train: TrainConfig = TrainConfig()

    # Directory of a saved model; trained from scratch when unset.
    checkpoint: Optional[str] = None


class EvaluationSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    test_images: int = Field(100, ge=1)
    emd_count: int = Field(500, ge=1)
    projection_count: int = Field(500, ge=1)
    restarts: Optional[int] = Field(None, ge=1)
    max_iter: int = Field(500, ge=1)
    alphas: List[float] = [0.0, 0.25, 0.5, 0.75, 1.0]
    far_radii: List[float] = [5.0, 10.0, 20.0]
    far_count: int = Field(8, ge=1)
    histogram_bins: int = Field(20, ge=1)

    @model_validator(mode="after")
    def _check_radii(self):
        if any(r <= 0 for r in self.far_radii):
            raise ValueError("far_radii must be positive")
        return self


class SolverSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    problem: ProblemConfig = ProblemConfig()
    methods: List[Method] = ["hard", "relaxed", "sparse", "tikhonov", "tv"]
    lams: Optional[List[float]] = None
    lam_low: float = Field(1e-3, gt=0)
    lam_high: float = Field(1.0, gt=0)
    lam_count: int = Field(4, ge=1)
    mus: List[float] = [1.0]
    images: int = Field(4, ge=1)
    restarts: Optional[int] = Field(None, ge=1)
    init: InitPolicy = "standard-normal"
    max_iter: int = Field(2000, ge=1)
    tol: float = Field(1e-8, gt=0)
    step: Optional[float] = Field(None, gt=0)
    inner_iterations: int = Field(100, ge=1)
    tv_inner_iterations: int = Field(100, ge=1)
    tv_gap_tol: float = Field(1e-6, gt=0)

    # Pick lam and mu per method on the tuning split, then solve the test images once.
    tune: bool = False

    # Write one PGM preview per solve.
    previews: bool = True

    @model_validator(mode="after")
    def _check_grid(self):
        if not self.methods:
            raise ValueError("methods must not be empty")
        if self.init == "given":
            raise ValueError("init 'given' has no latent to start from in an experiment file")
        if self.lams is not None:
            if not self.lams or any(lam < 0 for lam in self.lams):
                raise ValueError("lams must be a non-empty list of non-negative values")
            needs_positive = [method for method in self.methods if method != "pgd"]
            if needs_positive and any(lam == 0 for lam in self.lams):
                raise ValueError(f"lam = 0 is only valid for pgd, not for {', '.join(needs_positive)}")
        if not self.mus or any(mu < 0 for mu in self.mus):
            raise ValueError("mus must be a non-empty list of non-negative values")
        return self


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str = "experiment"
    seed: Optional[int] = None
    jobs: Optional[int] = Field(None, ge=1)
    output: Optional[str] = None

    dataset: DatasetSection = DatasetSection()
    model: ModelSection = ModelSection()
    evaluation: EvaluationSection = EvaluationSection()
    solver: SolverSection = SolverSection()

    # ------------------------------------------------------------
    # Resolution against flags and settings
    # ------------------------------------------------------------
    def resolved(self, seed: Optional[int] = None, jobs: Optional[int] = None, out: Optional[str] = None) -> "ExperimentConfig":
        """A copy with seed, jobs and output filled in: flag, then file, then settings."""
        if jobs is not None and jobs < 1:
            raise ConfigError(f"--jobs must be at least 1, got {jobs}")

        values = self.model_dump()
        values["seed"] = _first(seed, self.seed, settings.GENREG_DEFAULT_SEED)
        values["jobs"] = _first(jobs, self.jobs, settings.GENREG_JOBS)
        values["output"] = str(_first(out, self.output, settings.GENREG_OUT))
        return _validate(values, "resolved configuration")

    def updated(self, section: str, **values) -> "ExperimentConfig":
        """A copy with some fields of one section replaced, validated again."""
        dumped = self.model_dump()
        dumped[section].update(values)
        return _validate(dumped, f"{section} overrides")

    @property
    def output_dir(self) -> Path:
        return Path(self.output if self.output is not None else settings.GENREG_OUT)

    def echo(self, directory) -> Path:
        """config.json in the run directory; re-running it reproduces the run."""
        return write_json(Path(directory) / "config.json", self.model_dump(mode="json"))


def _first(*values):
    for value in values:
        if value is not None:
            return value
    return None


def _validate(values, source: str) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(values)
    except ValidationError as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def load_config(path=None) -> ExperimentConfig:
    """Parse an experiment file; no path gives the built-in defaults."""
    if path is None:
        return ExperimentConfig()

    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc

    try:
        values = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(values, dict):
        raise ConfigError(f"{path} must hold a JSON object, got {type(values).__name__}")

    config = _validate(values, str(path))
    logger.debug(f"[Config] loaded {config.name} from {path}")
    return config
