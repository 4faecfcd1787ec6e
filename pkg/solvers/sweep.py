# solvers/sweep.py

"""Regularisation-parameter grids: lambda x mu sweeps over a set of images and PSNR-optimal selection."""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from evaluation.metrics import capped, deviation_capture, nrmse, psnr, spot_capture

from .methods import SolveResult, SolveSpec
from .tasks import run_solves

logger = logging.getLogger(__name__)

# Methods whose objective contains the latent weight mu.
MU_METHODS = ("relaxed", "sparse", "sparse-tv")


@dataclass
class SweepCase:
    """
    One test image: ground truth, its noisy data and the Morozov level of
    that data. Shapes+ images also carry their spot and circle masks.
    """

    image_id: str
    truth: np.ndarray
    data: np.ndarray
    morozov: float
    spot: Optional[np.ndarray] = None
    circle: Optional[np.ndarray] = None


SpecBuilder = Callable[[SweepCase, str, float, float], SolveSpec]


def lambda_grid(low: float, high: float, count: int) -> np.ndarray:
    """count log-spaced values from low to high, both included."""
    if count < 1:
        raise ValueError(f"grid needs at least one point, got {count}")
    if low <= 0 or high < low:
        raise ValueError(f"grid bounds must satisfy 0 < low <= high, got low={low}, high={high}")
    if count == 1:
        return np.array([low])
    return np.logspace(np.log10(low), np.log10(high), count)


def _grid(methods, lams, mus) -> List[Tuple[str, float, float]]:
    points = []
    for method in methods:
        for lam in lams:
            for mu in (mus if method in MU_METHODS else mus[:1]):
                points.append((method, float(lam), float(mu)))
    return points


def sweep_row(case: SweepCase, result: SolveResult) -> Dict:
    """Per-solve CSV columns. Wall time goes to a separate timings file."""
    value = psnr(result.x, case.truth)
    row = {
        "method": result.method,
        "lam": result.lam,
        "mu": result.mu,
        "image": case.image_id,
        "seed": result.seed,
        "psnr": capped(value),
        "nrmse": nrmse(result.x, case.truth),
        "discrepancy": result.discrepancy,
        "morozov": case.morozov,
        "objective": result.final_objective,
        "iterations": result.iterations,
        "accepted": result.accepted,
        "rejected": result.rejected,
        "restart": result.restart,
    }
    if case.spot is not None:
        row["spot_capture"] = spot_capture(result.x, case.truth, case.spot, case.circle)
        row["spot_in_deviation"] = (
            deviation_capture(result.u, case.truth, case.spot, case.circle) if result.u is not None else 0.0
        )
    return row


def sweep(
    cases: Sequence[SweepCase],
    build: SpecBuilder,
    methods: Sequence[str],
    lams: Sequence[float],
    mus: Sequence[float] = (1.0,),
    jobs: int = 1,
) -> Tuple[List[Dict], List[SolveResult]]:
    """
    Solve every (method, lam, mu, image) combination. Rows come back ordered
    by method, lam, mu then image, each carrying the Morozov target of its
    data next to the achieved discrepancy.
    """
    if not cases:
        raise ValueError("sweep needs at least one image")
    if not mus:
        raise ValueError("sweep needs at least one mu value")

    points = _grid(methods, lams, mus)
    specs, owners = [], []
    for method, lam, mu in points:
        for case in cases:
            specs.append(build(case, method, lam, mu))
            owners.append(case)

    logger.info(f"[Sweep] {len(points)} parameter points x {len(cases)} images = {len(specs)} solves (jobs={jobs})")
    results = run_solves(specs, jobs=jobs)
    rows = [sweep_row(case, result) for case, result in zip(owners, results)]
    return rows, results


def tune_parameters(
    cases: Sequence[SweepCase],
    build: SpecBuilder,
    method: str,
    lams: Sequence[float],
    mus: Sequence[float] = (1.0,),
    jobs: int = 1,
) -> Tuple[float, float, float]:
    """(lam, mu, mean PSNR) maximising the mean capped PSNR over the tuning images; ties keep the earlier grid point."""
    rows, _ = sweep(cases, build, [method], lams, mus, jobs=jobs)

    scores: Dict[Tuple[float, float], List[float]] = {}
    for row in rows:
        scores.setdefault((row["lam"], row["mu"]), []).append(row["psnr"])

    best, best_score = None, -np.inf
    for key, values in scores.items():
        score = float(np.mean(values))
        if score > best_score:
            best, best_score = key, score

    logger.info(f"[Sweep] {method}: best lam={best[0]:g} mu={best[1]:g} mean PSNR={best_score:.2f} dB")
    return best[0], best[1], best_score


def discrepancy_principle(rows: Sequence[Dict], method: str) -> Optional[Dict]:
    """
    The (lam, mu) point of `method` whose mean discrepancy over the images is
    closest to their mean Morozov target, measured as |log(discrepancy / target)|.
    Ties keep the earlier grid point; None when the method has no rows.
    """
    groups: Dict[Tuple[float, float], List[Tuple[float, float]]] = {}
    for row in rows:
        if row["method"] == method:
            groups.setdefault((row["lam"], row["mu"]), []).append((row["discrepancy"], row["morozov"]))
    if not groups:
        return None

    best, best_distance = None, np.inf
    for (lam, mu), values in groups.items():
        discrepancy, target = (float(np.mean(column)) for column in zip(*values))
        if target > 0:
            distance = abs(np.log(max(discrepancy, np.finfo(np.float64).tiny) / target))
        else:
            # noiseless data: the smallest discrepancy wins
            distance = discrepancy
        if distance < best_distance:
            best_distance = distance
            best = {"method": method, "lam": lam, "mu": mu, "discrepancy": discrepancy, "morozov": target}

    logger.info(
        f"[Sweep] {method}: discrepancy principle picks lam={best['lam']:g} mu={best['mu']:g} "
        f"(discrepancy {best['discrepancy']:.4g}, target {best['morozov']:.4g})"
    )
    return best
