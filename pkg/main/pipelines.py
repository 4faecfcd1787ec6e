# main/pipelines.py

"""
The four experiment pipelines behind the management commands. Each one takes
a resolved ExperimentConfig, writes into its own run directory under the
output root and returns that directory.
"""

import logging
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from django.conf import settings

from autodiff.checkpoint import save_tensors
from datasets.cache import save_dataset
from datasets.mnist import load_mnist
from datasets.shapes import Dataset, ShapesConfig, generate_shapes, train_test_split
from evaluation.diagnostics import encode_by_optimization, interpolation_grid, latent_projection_2d, sample_far_from_prior
from evaluation.emd import emd
from evaluation.metrics import capped, psnr
from evaluation.reports import MetricReport, method_summary, nrmse_summary, write_rows
from generative.store import load_models, save_models
from generative.training import TrainedModels, default_architecture, train
from genreg.exceptions import ConfigError
from genreg.storage import ensure_dir, mosaic, run_directory, write_csv, write_json, write_pgm
from operators.base import LinearOperator
from operators.noise import add_noise, morozov_target
from operators.problems import ProblemConfig, build_operator
from solvers.backtracking import StoppingRule
from solvers.methods import GENERATOR_METHODS, SolveResult, SolveSpec
from solvers.sweep import SweepCase, discrepancy_principle, lambda_grid, sweep, tune_parameters

from .config import DatasetSection, ExperimentConfig

logger = logging.getLogger(__name__)

PREVIEW_TILES = 16
SPLITS = ("train", "test", "tune")


# ============================================================
#  DATA
# ============================================================

def load_split(section: DatasetSection, split: str, seed: int, count: Optional[int] = None) -> Dataset:
    """
    Shapes splits are synthesised from (seed, split, index), so the first k
    images of a split never depend on its size. MNIST tuning images are taken
    from the training file right after the training images. Shapes+ test
    and tuning images carry the bright spot; training images only when
    `spot_in_train` is set.
    """
    if split not in SPLITS:
        raise ValueError(f"unknown split '{split}', expected one of {', '.join(SPLITS)}")
    count = section.count(split) if count is None else count

    if section.kind == "mnist":
        directory = Path(section.path) if section.path else settings.GENREG_MNIST_DIR
        if split == "tune":
            offset = section.count("train")
            pool = load_mnist(directory, "train", limit=offset + count)
            if len(pool) < offset + count:
                raise ConfigError(f"MNIST training file holds {len(pool)} images, {offset} train + {count} tune requested")
            _, tune = train_test_split(pool, count, names=("train", "tune"))
            return tune
        return load_mnist(directory, split, limit=count)

    shapes = ShapesConfig(
        image_size=section.image_size,
        count=count,
        seed=seed,
        split=split,
        intensity_low=section.intensity_low,
        intensity_high=section.intensity_high,
        bright_spot=section.bright_spot(split),
    )
    return generate_shapes(shapes)


def _preview(images: Sequence[np.ndarray], path, n_cols: int = 4) -> Path:
    return write_pgm(path, mosaic(list(images[:PREVIEW_TILES]), n_cols=n_cols))


def data_pipeline(config: ExperimentConfig, splits: Sequence[str] = SPLITS) -> Path:
    run_dir = run_directory(config.output_dir, f"{config.name}-{config.dataset.kind}-data", config.seed)

    for split in splits:
        dataset = load_split(config.dataset, split, config.seed)
        save_dataset(dataset, run_dir)
        _preview(dataset.images, run_dir / f"{split}-preview.pgm")

    config.echo(run_dir)
    logger.info(f"[Pipeline] data for {config.name} written to {run_dir}")
    return run_dir


# ============================================================
#  TRAIN
# ============================================================

def train_models(config: ExperimentConfig) -> TrainedModels:
    """The experiment seed drives weight init, shuffling and latent draws."""
    dataset = load_split(config.dataset, "train", config.seed)
    model = config.model
    architecture = default_architecture(
        model.kind, dataset, latent_dim=model.latent_dim, alpha=model.alpha, dropout=model.dropout
    )
    train_config = model.train.model_copy(update={"seed": config.seed})
    return train(model.kind, dataset, train_config, architecture=architecture)


def write_losses(path, trained: TrainedModels) -> Path:
    keys = ["epoch"]
    for record in trained.history:
        keys += [key for key in record if key not in keys]
    return write_csv(path, keys, ([record.get(key, "") for key in keys] for record in trained.history))


def train_pipeline(config: ExperimentConfig) -> Path:
    run_dir = run_directory(config.output_dir, f"{config.name}-{config.model.kind}", config.seed)
    trained = train_models(config)

    save_models(trained, run_dir / "model")
    write_losses(run_dir / "losses.csv", trained)

    latents = np.random.default_rng([config.seed, 5]).standard_normal((PREVIEW_TILES, trained.architecture.latent_dim))
    _preview(trained.generator.images(latents), run_dir / "samples.pgm")

    config.echo(run_dir)
    logger.info(f"[Pipeline] trained {config.model.kind} for {config.name} in {run_dir}")
    return run_dir


def resolve_models(config: ExperimentConfig, run_dir: Path) -> TrainedModels:
    """The configured checkpoint, or a freshly trained model saved next to the run's other artifacts."""
    if config.model.checkpoint:
        trained = load_models(config.model.checkpoint)
        if trained.kind != config.model.kind:
            raise ConfigError(
                f"checkpoint {config.model.checkpoint} holds a '{trained.kind}' model, config asks for '{config.model.kind}'"
            )
        return trained

    trained = train_models(config)
    save_models(trained, run_dir / "model")
    write_losses(run_dir / "losses.csv", trained)
    return trained


def _check_image_shape(trained: TrainedModels, dataset: Dataset):
    if tuple(trained.architecture.image_shape) != tuple(dataset.image_shape):
        raise ConfigError(
            f"model {trained.architecture.name} produces {tuple(trained.architecture.image_shape)} images, "
            f"dataset has {tuple(dataset.image_shape)}"
        )


# ============================================================
#  EVALUATE
# ============================================================

def evaluate_pipeline(config: ExperimentConfig) -> Path:
    """
    Generator diagnostics: reconstruction of test images by latent
    optimisation, EMD between test images and generated samples, random 2-D
    latent projections, interpolation grid and far-from-prior samples.
    """
    run_dir = run_directory(config.output_dir, f"{config.name}-{config.model.kind}-evaluate", config.seed)
    trained = resolve_models(config, run_dir)
    generator, encoder = trained.generator, trained.encoder
    evaluation = config.evaluation

    test = load_split(config.dataset, "test", config.seed)
    _check_image_shape(trained, test)
    stopping = StoppingRule(max_iter=evaluation.max_iter)

    # reconstruction by latent optimisation
    report = MetricReport(
        provenance={
            "model": trained.architecture.name,
            "kind": trained.kind,
            "dataset": test.provenance,
            "split": test.split,
            "seed": config.seed,
            "checkpoint": config.model.checkpoint or str(run_dir / "model"),
        }
    )
    encodings = []
    for k in range(min(evaluation.test_images, len(test))):
        target = test.images[k]
        encoding = encode_by_optimization(
            target, generator, encoder=encoder, restarts=evaluation.restarts, seed=config.seed, stopping=stopping
        )
        encodings.append(encoding)
        report.add(f"test-{k}", "nrmse", encoding.nrmse)
        report.add(f"test-{k}", "initial_nrmse", encoding.initial_nrmse)
        report.add(f"test-{k}", "psnr", capped(psnr(encoding.image, target)))
    report.write(run_dir, "reconstruction")
    write_rows(run_dir / "nrmse_summary.csv", nrmse_summary({trained.kind: report}))

    counts, edges = np.histogram(report.values("nrmse"), bins=evaluation.histogram_bins)
    write_csv(run_dir / "nrmse_histogram.csv", ["low", "high", "count"], zip(edges[:-1], edges[1:], counts.tolist()))

    # earth mover's distance to generated samples
    n_emd = min(evaluation.emd_count, len(test))
    prior = np.random.default_rng([config.seed, 13]).standard_normal((n_emd, generator.latent_dim))
    emd_value = emd(test.images[:n_emd], generator.images(prior))

    # latent projections: encodings against standard-normal draws
    reference = np.random.default_rng([config.seed, 29]).standard_normal((evaluation.projection_count, generator.latent_dim))
    encoded = np.array([e.z for e in encodings])
    proj_encoded, proj_reference, _ = latent_projection_2d(encoded, reference, seed=config.seed)
    write_csv(
        run_dir / "projection.csv",
        ["set", "index", "p1", "p2"],
        [("encoded", i, p[0], p[1]) for i, p in enumerate(proj_encoded)]
        + [("prior", i, p[0], p[1]) for i, p in enumerate(proj_reference)],
    )

    # interpolation between three encodings
    corners = [e.z for e in encodings[:3]]
    if len(corners) < 3:
        extra = np.random.default_rng([config.seed, 31]).standard_normal((3 - len(corners), generator.latent_dim))
        corners += list(extra)
    grid = interpolation_grid(generator, *corners, alphas=evaluation.alphas)
    tiles = grid.reshape((-1,) + tuple(generator.image_shape))
    write_pgm(run_dir / "interpolation.pgm", mosaic(list(tiles), n_cols=len(evaluation.alphas)))

    # far from the prior
    far_rows = []
    for radius in evaluation.far_radii:
        latents, images = sample_far_from_prior(generator, radius, evaluation.far_count, seed=config.seed)
        write_pgm(run_dir / f"far_r{radius:g}.pgm", mosaic(list(images), n_cols=min(evaluation.far_count, 8)))
        for i, (z, image) in enumerate(zip(latents, images)):
            far_rows.append((radius, i, float(np.linalg.norm(z)), float(image.min()), float(image.max()), float(image.mean())))
    write_csv(run_dir / "far_from_prior.csv", ["radius", "index", "latent_norm", "min", "max", "mean"], far_rows)

    write_json(
        run_dir / "evaluate.json",
        {
            "model": trained.architecture.name,
            "kind": trained.kind,
            "generator_kind": generator.kind,
            "emd": emd_value,
            "emd_count": n_emd,
            "reconstruction": report.aggregates("nrmse"),
            "encoded_images": len(encodings),
        },
    )
    config.echo(run_dir)
    logger.info(f"[Pipeline] evaluated {trained.architecture.name}: EMD={emd_value:.6g}, {len(encodings)} encodings")
    return run_dir


# ============================================================
#  RECONSTRUCT
# ============================================================

def make_cases(operator: LinearOperator, dataset: Dataset, problem: ProblemConfig, prefix: str, offset: int = 0) -> List[SweepCase]:
    """Noisy data for each image; image k gets noise seed noise_seed + offset + k."""
    spots = dataset.masks.get("spot")
    cases = []
    for k, truth in enumerate(dataset.images):
        noise = problem.noise_model(offset + k)
        data = add_noise(operator.apply(truth), noise)
        case = SweepCase(f"{prefix}-{k}", truth, data, morozov_target(noise, operator.output_size))
        if spots is not None:
            case.spot, case.circle = spots[k], dataset.masks["circle"][k]
        cases.append(case)
    return cases


def spec_builder(
    operator: LinearOperator, config: ExperimentConfig, trained: Optional[TrainedModels]
) -> Callable[[SweepCase, str, float, float], SolveSpec]:
    solver = config.solver
    stopping = StoppingRule(max_iter=solver.max_iter, tol=solver.tol)

    def build(case: SweepCase, method: str, lam: float, mu: float) -> SolveSpec:
        latent = method in GENERATOR_METHODS
        return SolveSpec(
            operator=operator,
            data=case.data,
            method=method,
            lam=lam,
            mu=mu,
            generator=trained.generator if latent else None,
            encoder=trained.encoder if latent and solver.init == "encoder" else None,
            init=solver.init if latent else "standard-normal",
            restarts=solver.restarts if latent else None,
            seed=config.seed,
            stopping=stopping,
            step=solver.step,
            inner_iterations=solver.inner_iterations,
            tv_inner_iterations=solver.tv_inner_iterations,
            tv_gap_tol=solver.tv_gap_tol,
        )

    return build


def _solve_grid(config: ExperimentConfig, cases, tune_cases, build, lams) -> Tuple[List[Dict], List[SolveResult], List[Dict]]:
    solver = config.solver
    if not solver.tune:
        rows, results = sweep(cases, build, solver.methods, lams, solver.mus, jobs=config.jobs)
        return rows, results, []

    rows, results, chosen = [], [], []
    for method in solver.methods:
        lam, mu, score = tune_parameters(tune_cases, build, method, lams, solver.mus, jobs=config.jobs)
        chosen.append({"method": method, "lam": lam, "mu": mu, "mean_psnr": score})
        method_rows, method_results = sweep(cases, build, [method], [lam], [mu], jobs=config.jobs)
        rows += method_rows
        results += method_results
    return rows, results, chosen


def _discrepancy_table(rows: List[Dict]) -> List[Dict]:
    morozov = {}
    for row in rows:
        morozov.setdefault((row["method"], row["lam"], row["mu"]), row["morozov"])
    table = method_summary(rows, metric="discrepancy")
    for entry in table:
        entry["morozov"] = morozov[(entry["method"], entry["lam"], entry["mu"])]
    return table


def _summary_table(rows: List[Dict]) -> List[Dict]:
    table = method_summary(rows, metric="psnr")
    extra_metrics = ["nrmse"] + [metric for metric in ("spot_capture", "spot_in_deviation") if metric in rows[0]]
    for metric in extra_metrics:
        for entry, extra in zip(table, method_summary(rows, metric=metric)):
            entry[f"{metric}_mean"] = extra[f"{metric}_mean"]
            entry[f"{metric}_std"] = extra[f"{metric}_std"]
    return table


def _write_solves(run_dir: Path, rows: List[Dict], results: List[SolveResult], cases_by_id: Dict[str, SweepCase], previews: bool):
    trace_rows, tensors = [], {}
    preview_dir = ensure_dir(run_dir / "previews") if previews else None

    for index, (row, result) in enumerate(zip(rows, results)):
        key = f"solve{index:04d}"
        tensors[f"{key}.x"] = result.x
        if result.z is not None:
            tensors[f"{key}.z"] = result.z
        if result.u is not None:
            tensors[f"{key}.u"] = result.u
        if result.x_generator is not None:
            tensors[f"{key}.x_generator"] = result.x_generator

        for iteration, value in enumerate(result.objective):
            trace_rows.append((index, row["method"], row["lam"], row["mu"], row["image"], iteration, value))

        if preview_dir is not None:
            truth = cases_by_id[row["image"]].truth
            from_generator = result.x_generator if result.x_generator is not None else result.x
            tiles = [truth, result.x, from_generator, np.abs(result.x - truth)]
            write_pgm(preview_dir / f"{key}-{row['method']}.pgm", mosaic(tiles, n_cols=len(tiles)))

    write_csv(run_dir / "traces.csv", ["solve", "method", "lam", "mu", "image", "iteration", "objective"], trace_rows)
    write_csv(
        run_dir / "timings.csv",
        ["solve", "method", "lam", "mu", "image", "wall_ms"],
        ((i, row["method"], row["lam"], row["mu"], row["image"], result.wall_ms) for i, (row, result) in enumerate(zip(rows, results))),
    )
    save_tensors(run_dir / "reconstructions.grg", tensors)


def reconstruct_pipeline(config: ExperimentConfig) -> Path:
    """
    Solve the configured inverse problem on the first `solver.images` test
    images with every method over the lam x mu grid (or at the parameters
    tuned on the tuning split), then write per-solve rows, per-method
    summaries, the discrepancy table against the Morozov target, objective
    traces, reconstructions and previews.
    """
    solver = config.solver
    problem = solver.problem
    run_dir = run_directory(config.output_dir, f"{config.name}-{problem.kind}-reconstruct", config.seed)

    trained = None
    if any(method in GENERATOR_METHODS for method in solver.methods):
        trained = resolve_models(config, run_dir)

    test = load_split(config.dataset, "test", config.seed, count=min(solver.images, config.dataset.count("test")))
    if trained is not None:
        _check_image_shape(trained, test)

    operator = build_operator(problem, tuple(test.image_shape))
    cases = make_cases(operator, test, problem, "test")
    tune_cases = []
    if solver.tune:
        tune = load_split(config.dataset, "tune", config.seed)
        tune_cases = make_cases(operator, tune, problem, "tune", offset=len(cases))

    lams = solver.lams if solver.lams is not None else lambda_grid(solver.lam_low, solver.lam_high, solver.lam_count).tolist()
    build = spec_builder(operator, config, trained)
    rows, results, chosen = _solve_grid(config, cases, tune_cases, build, lams)

    write_rows(run_dir / "solves.csv", rows)
    write_rows(run_dir / "summary.csv", _summary_table(rows))
    write_rows(run_dir / "discrepancy.csv", _discrepancy_table(rows))
    if chosen:
        write_rows(run_dir / "tuning.csv", chosen)
    if not solver.tune:
        picks = [discrepancy_principle(rows, method) for method in solver.methods]
        write_rows(run_dir / "morozov_choice.csv", [pick for pick in picks if pick is not None])
    _write_solves(run_dir, rows, results, {case.image_id: case for case in cases}, solver.previews)

    tolerance_warnings = sum(1 for result in results if result.tolerance_warning)
    if tolerance_warnings:
        logger.warning(f"[Pipeline] {tolerance_warnings} solves ended above their inner or residual tolerance")

    write_json(
        run_dir / "reconstruct.json",
        {
            "problem": problem.model_dump(mode="json"),
            "operator": operator.describe(),
            "noise_sigma": problem.noise_sigma,
            "morozov": cases[0].morozov,
            "images": len(cases),
            "solves": len(results),
            "tolerance_warnings": tolerance_warnings,
            "model": trained.architecture.name if trained is not None else None,
        },
    )
    config.echo(run_dir)
    logger.info(f"[Pipeline] {len(results)} solves for {config.name} written to {run_dir}")
    return run_dir
