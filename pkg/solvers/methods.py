# solvers/methods.py

"""
Reconstruction methods for y = A x + noise.

Generator-backed:   hard, relaxed, sparse, sparse-tv, pgd
Classical:          tikhonov, tv

The data fit is the unscaled ||Ax - y||^2 in every objective.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Literal, Optional

import numpy as np
from django.conf import settings

from generative.networks import EncoderModel, GeneratorModel
from genreg.exceptions import NumericalAbort
from operators.base import LinearOperator, operator_norm

from .backtracking import (
    BacktrackState,
    StoppingRule,
    alt_gd_backtracking,
    gd_backtracking,
    palm_backtracking,
    relative_change,
)
from .prox import TVProx, prox_l1, prox_scaled_sqnorm
from .tv import gradient, pdhg_tv, tv_norm

logger = logging.getLogger(__name__)

Method = Literal["hard", "relaxed", "sparse", "sparse-tv", "pgd", "tikhonov", "tv"]
InitPolicy = Literal["standard-normal", "encoder", "given"]

GENERATOR_METHODS = ("hard", "relaxed", "sparse", "sparse-tv", "pgd")
METHODS = GENERATOR_METHODS + ("tikhonov", "tv")

@dataclass
class SolveSpec:
    operator: LinearOperator
    data: np.ndarray
    method: Method
    lam: float = 0.1
    mu: float = 1.0
    generator: Optional[GeneratorModel] = None
    encoder: Optional[EncoderModel] = None
    init: InitPolicy = "standard-normal"
    z0: Optional[np.ndarray] = None
    restarts: Optional[int] = None
    seed: int = 0
    stopping: StoppingRule = field(default_factory=StoppingRule)
    backtrack: BacktrackState = field(default_factory=BacktrackState)

    # pgd
    step: Optional[float] = None
    inner_iterations: int = 100

    # tv / sparse-tv
    tv_inner_iterations: int = 100
    tv_max_inner_iterations: int = 5000
    tv_gap_tol: float = 1e-6
    residual_tol: float = 1e-4

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}, expected one of {', '.join(METHODS)}")

        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.shape != self.operator.output_shape:
            raise ValueError(f"data has shape {self.data.shape}, operator produces {self.operator.output_shape}")

        needs_generator = self.method in GENERATOR_METHODS
        if needs_generator and self.generator is None:
            raise ValueError(f"method {self.method!r} needs a generator")
        if not needs_generator and self.generator is not None:
            raise ValueError(f"method {self.method!r} does not use a generator")
        if self.generator is not None and tuple(self.generator.image_shape) != self.operator.input_shape:
            raise ValueError(
                f"generator images {tuple(self.generator.image_shape)} do not match operator input {self.operator.input_shape}"
            )

        if self.method != "pgd" and not self.lam > 0:
            raise ValueError(f"method {self.method!r} needs lam > 0, got {self.lam}")
        if self.mu < 0:
            raise ValueError(f"mu must be non-negative, got {self.mu}")

        if self.init == "encoder" and self.encoder is None:
            raise ValueError("encoder initialisation needs an encoder")
        if self.init == "given":
            if self.z0 is None:
                raise ValueError("init 'given' needs z0")
            self.z0 = np.asarray(self.z0, dtype=np.float64)
            if self.generator is not None and self.z0.shape != (self.generator.latent_dim,):
                raise ValueError(f"z0 has shape {self.z0.shape}, latent dimension is {self.generator.latent_dim}")

        if self.restarts is None:
            self.restarts = 4 if self.generator is not None and self.generator.kind == "gan-generator" else 1
        if self.restarts < 1:
            raise ValueError(f"restarts must be at least 1, got {self.restarts}")
        if self.step is not None and not self.step > 0:
            raise ValueError(f"pgd step must be positive, got {self.step}")


@dataclass
class SolveResult:
    method: str
    x: np.ndarray
    objective: List[float]
    discrepancy: float
    lam: float
    mu: float
    seed: int
    z: Optional[np.ndarray] = None
    u: Optional[np.ndarray] = None
    x_generator: Optional[np.ndarray] = None
    accepted: int = 0
    rejected: int = 0
    iterations: int = 0
    converged: bool = False
    wall_ms: float = 0.0
    gap: Optional[float] = None
    residual: Optional[float] = None
    tolerance_warning: bool = False
    restart: int = 0
    restart_objectives: List[float] = field(default_factory=list)

    @property
    def final_objective(self) -> float:
        return self.objective[-1]

    def summary(self) -> Dict[str, Any]:
        return {
            "method": self.method,
            "lam": self.lam,
            "mu": self.mu,
            "seed": self.seed,
            "objective": self.final_objective,
            "discrepancy": self.discrepancy,
            "iterations": self.iterations,
            "accepted": self.accepted,
            "rejected": self.rejected,
            "converged": self.converged,
            "restart": self.restart,
        }


def discrepancy(operator: LinearOperator, x: np.ndarray, y: np.ndarray) -> float:
    return float(np.linalg.norm(operator.apply(x) - y))


def _check_descent() -> bool:
    return bool(getattr(settings, "GENREG_CHECK_DESCENT", False))


# ============================================================
#  INITIALISATION
# ============================================================

def adjoint_estimate(operator: LinearOperator, y: np.ndarray) -> np.ndarray:
    """alpha A^T y with alpha = <A A^T y, y> / ||A A^T y||^2, clipped to [0, 1]."""
    back = operator.adjoint(y)
    forward = operator.apply(back)
    denom = float(np.vdot(forward, forward))
    alpha = float(np.vdot(forward, y)) / denom if denom > 0 else 0.0
    return np.clip(alpha * back, 0.0, 1.0)


def initial_latent(spec: SolveSpec, restart: int) -> np.ndarray:
    """Restart k draws from seed + k. Encoder and given policies only fix restart 0."""
    d = spec.generator.latent_dim
    if restart == 0 and spec.init == "given":
        return spec.z0.copy()
    if restart == 0 and spec.init == "encoder":
        return np.asarray(spec.encoder.encode(adjoint_estimate(spec.operator, spec.data)), dtype=np.float64)
    return np.random.default_rng(spec.seed + restart).standard_normal(d)


class _CachedGenerator:
    """Remembers the last G(z) so alternating blocks do not re-run the network for the same z."""

    def __init__(self, generator: GeneratorModel):
        self.generator = generator
        self._z = None
        self._x = None

    def image(self, z: np.ndarray) -> np.ndarray:
        if self._z is None or not np.array_equal(z, self._z):
            self._z = np.array(z)
            self._x = self.generator.image(z)
        return self._x

    def pullback(self, z: np.ndarray, cotangent_fn):
        x, c, jtc = self.generator.value_and_pullback(z, cotangent_fn)
        self._z, self._x = np.array(z), x
        return x, c, jtc


# ============================================================
#  HARD: min_z ||A G(z) - y||^2 + lam ||z||^2
# ============================================================

def solve_hard(spec: SolveSpec, z0: np.ndarray) -> SolveResult:
    A, y, lam = spec.operator, spec.data, spec.lam
    G = spec.generator

    def value(z):
        r = A.apply(G.image(z)) - y
        return float(np.vdot(r, r)) + lam * float(np.vdot(z, z))

    def value_and_grad(z):
        fit = {}

        def cotangent(x):
            r = A.apply(x) - y
            fit["value"] = float(np.vdot(r, r))
            return 2.0 * A.adjoint(r)

        _, _, jtc = G.value_and_pullback(z, cotangent)
        return fit["value"] + lam * float(np.vdot(z, z)), jtc + 2.0 * lam * z

    z, trace = gd_backtracking(
        value, value_and_grad, z0, spec.backtrack, spec.stopping, check_descent=_check_descent(), label="hard"
    )
    x = G.image(z)
    return SolveResult(
        method="hard",
        x=x,
        z=z,
        objective=trace.objective,
        discrepancy=discrepancy(A, x, y),
        lam=lam,
        mu=spec.mu,
        seed=spec.seed,
        accepted=trace.accepted,
        rejected=trace.rejected,
        iterations=trace.iterations,
        converged=trace.converged,
    )


# ============================================================
#  RELAXED: min_{z,x} ||Ax - y||^2 + lam (||G(z) - x||^2 + mu ||z||^2)
# ============================================================

def solve_relaxed(spec: SolveSpec, z0: np.ndarray) -> SolveResult:
    A, y, lam, mu = spec.operator, spec.data, spec.lam, spec.mu
    G = _CachedGenerator(spec.generator)

    def value(z, x):
        r = A.apply(x) - y
        d = G.image(z) - x
        return float(np.vdot(r, r)) + lam * (float(np.vdot(d, d)) + mu * float(np.vdot(z, z)))

    def grad_z(z, x):
        parts = {}

        def cotangent(gz):
            d = gz - x
            parts["d"] = d
            return 2.0 * lam * d

        _, _, jtc = G.pullback(z, cotangent)
        r = A.apply(x) - y
        d = parts["d"]
        f = float(np.vdot(r, r)) + lam * (float(np.vdot(d, d)) + mu * float(np.vdot(z, z)))
        return f, jtc + 2.0 * lam * mu * z

    def grad_x(z, x):
        r = A.apply(x) - y
        d = G.image(z) - x
        f = float(np.vdot(r, r)) + lam * (float(np.vdot(d, d)) + mu * float(np.vdot(z, z)))
        return f, 2.0 * A.adjoint(r) - 2.0 * lam * d

    x0 = spec.generator.image(z0)
    z, x, trace = alt_gd_backtracking(
        value,
        grad_z,
        grad_x,
        z0,
        x0,
        (spec.backtrack, spec.backtrack),
        spec.stopping,
        check_descent=_check_descent(),
        label="relaxed",
    )

    gz = spec.generator.image(z)
    gap = float(np.linalg.norm(x - gz) / max(np.linalg.norm(x), np.finfo(np.float64).tiny))
    logger.debug(f"[Solver] relaxed: ||x - G(z)|| / ||x|| = {gap:.3e}")
    return SolveResult(
        method="relaxed",
        x=x,
        z=z,
        u=x - gz,
        x_generator=gz,
        objective=trace.objective,
        discrepancy=discrepancy(A, x, y),
        lam=lam,
        mu=mu,
        seed=spec.seed,
        accepted=trace.accepted,
        rejected=trace.rejected,
        iterations=trace.iterations,
        converged=trace.converged,
    )


# ============================================================
#  SPARSE / SPARSE-TV: min_{z,u} ||A(G(z) + u) - y||^2 + lam (F(u) + mu ||z||^2)
# ============================================================

def _split_solve(
    spec: SolveSpec, z0: np.ndarray, g2: Callable, prox2: Callable, label: str, allowance: Optional[Callable] = None
):
    A, y, lam, mu = spec.operator, spec.data, spec.lam, spec.mu
    G = _CachedGenerator(spec.generator)

    def value(z, u):
        r = A.apply(G.image(z) + u) - y
        return float(np.vdot(r, r))

    def grad_z(z, u):
        fit = {}

        def cotangent(gz):
            r = A.apply(gz + u) - y
            fit["value"] = float(np.vdot(r, r))
            return 2.0 * A.adjoint(r)

        _, _, jtc = G.pullback(z, cotangent)
        return fit["value"], jtc

    def grad_u(z, u):
        r = A.apply(G.image(z) + u) - y
        return float(np.vdot(r, r)), 2.0 * A.adjoint(r)

    u0 = np.zeros(A.input_shape)
    return palm_backtracking(
        value,
        grad_z,
        grad_u,
        lambda z: lam * mu * float(np.vdot(z, z)),
        g2,
        lambda v, t: prox_scaled_sqnorm(v, t, lam * mu),
        prox2,
        z0,
        u0,
        (spec.backtrack, spec.backtrack),
        spec.stopping,
        check_descent=_check_descent(),
        descent_allowance=allowance,
        label=label,
    )


def _split_result(spec: SolveSpec, label: str, z, u, trace, **extra) -> SolveResult:
    gz = spec.generator.image(z)
    x = gz + u
    return SolveResult(
        method=label,
        x=x,
        z=z,
        u=u,
        x_generator=gz,
        objective=trace.objective,
        discrepancy=discrepancy(spec.operator, x, spec.data),
        lam=spec.lam,
        mu=spec.mu,
        seed=spec.seed,
        accepted=trace.accepted,
        rejected=trace.rejected,
        iterations=trace.iterations,
        converged=trace.converged,
        **extra,
    )


def solve_sparse(spec: SolveSpec, z0: np.ndarray) -> SolveResult:
    lam = spec.lam
    z, u, trace = _split_solve(
        spec,
        z0,
        lambda u: lam * float(np.abs(u).sum()),
        lambda v, t: prox_l1(v, t * lam),
        "sparse",
    )
    logger.debug(f"[Solver] sparse: {int(np.count_nonzero(u))} nonzero deviation entries")
    return _split_result(spec, "sparse", z, u, trace)


def solve_sparse_tv(spec: SolveSpec, z0: np.ndarray) -> SolveResult:
    if len(spec.operator.input_shape) != 2:
        raise ValueError(f"sparse-tv needs 2-D images, operator input shape is {spec.operator.input_shape}")
    lam = spec.lam
    prox = TVProx(
        lam,
        iterations=spec.tv_inner_iterations,
        gap_tol=spec.tv_gap_tol,
        max_iterations=spec.tv_max_inner_iterations,
    )
    z, u, trace = _split_solve(
        spec,
        z0,
        lambda u: lam * tv_norm(u),
        prox,
        "sparse-tv",
        allowance=lambda: prox.worst_error,
    )
    prox.report("sparse-tv")
    return _split_result(spec, "sparse-tv", z, u, trace, gap=prox.worst_gap, tolerance_warning=prox.gap_warning)


# ============================================================
#  PROJECTED GRADIENT DESCENT
# ============================================================

def solve_pgd(spec: SolveSpec, z0: np.ndarray) -> SolveResult:
    """
    w <- x - eta A^T (A x - y);  z <- argmin_z ||w - G(z)||^2 (warm started);  x <- G(z).
    The traced quantity is the discrepancy ||A x - y||.
    """
    A, y, G = spec.operator, spec.data, spec.generator
    eta = spec.step
    if eta is None:
        norm = operator_norm(A)
        if norm == 0:
            raise ValueError("pgd needs a non-zero operator")
        eta = 1.0 / norm ** 2

    inner = StoppingRule(max_iter=spec.inner_iterations, tol=spec.stopping.tol)
    z = np.array(z0, dtype=np.float64)
    x = G.image(z)
    trace = [discrepancy(A, x, y)]
    accepted = rejected = iterations = 0
    converged = False

    for _ in range(spec.stopping.max_iter):
        w = x - eta * A.adjoint(A.apply(x) - y)
        z, inner_trace = project_to_range(G, w, z, spec.backtrack, inner)
        accepted += inner_trace.accepted
        rejected += inner_trace.rejected

        x_new = G.image(z)
        change = relative_change(x_new, x)
        x = x_new
        iterations += 1
        trace.append(discrepancy(A, x, y))
        if change < spec.stopping.tol:
            converged = True
            break

    return SolveResult(
        method="pgd",
        x=x,
        z=z,
        objective=trace,
        discrepancy=trace[-1],
        lam=spec.lam,
        mu=spec.mu,
        seed=spec.seed,
        accepted=accepted,
        rejected=rejected,
        iterations=iterations,
        converged=converged,
    )


def project_to_range(
    generator: GeneratorModel,
    target: np.ndarray,
    z0: np.ndarray,
    state: Optional[BacktrackState] = None,
    stopping: Optional[StoppingRule] = None,
    label: str = "projection",
):
    """Approximate argmin_z ||target - G(z)||^2 by backtracking gradient descent from z0."""
    target = np.asarray(target, dtype=np.float64)

    def value(z):
        d = generator.image(z) - target
        return float(np.vdot(d, d))

    def value_and_grad(z):
        fit = {}

        def cotangent(x):
            d = x - target
            fit["value"] = float(np.vdot(d, d))
            return 2.0 * d

        _, _, jtc = generator.value_and_pullback(z, cotangent)
        return fit["value"], jtc

    return gd_backtracking(value, value_and_grad, z0, state, stopping, check_descent=_check_descent(), label=label)


# ============================================================
#  CLASSICAL BASELINES
# ============================================================

def solve_tikhonov(spec: SolveSpec) -> SolveResult:
    A, y, lam = spec.operator, spec.data, spec.lam

    def value(x):
        r = A.apply(x) - y
        return float(np.vdot(r, r)) + lam * float(np.vdot(x, x))

    def value_and_grad(x):
        r = A.apply(x) - y
        return float(np.vdot(r, r)) + lam * float(np.vdot(x, x)), 2.0 * A.adjoint(r) + 2.0 * lam * x

    x, trace = gd_backtracking(
        value,
        value_and_grad,
        np.zeros(A.input_shape),
        spec.backtrack,
        spec.stopping,
        check_descent=_check_descent(),
        label="tikhonov",
    )
    return SolveResult(
        method="tikhonov",
        x=x,
        objective=trace.objective,
        discrepancy=discrepancy(A, x, y),
        lam=lam,
        mu=spec.mu,
        seed=spec.seed,
        accepted=trace.accepted,
        rejected=trace.rejected,
        iterations=trace.iterations,
        converged=trace.converged,
    )


def solve_tv(spec: SolveSpec) -> SolveResult:
    x, trace = pdhg_tv(
        spec.operator,
        spec.data,
        spec.lam,
        max_iter=spec.stopping.max_iter,
        tol=spec.stopping.tol,
        residual_tol=spec.residual_tol,
    )
    return SolveResult(
        method="tv",
        x=x,
        objective=trace.objective,
        discrepancy=discrepancy(spec.operator, x, spec.data),
        lam=spec.lam,
        mu=spec.mu,
        seed=spec.seed,
        iterations=trace.iterations,
        converged=trace.converged,
        residual=trace.residual,
        tolerance_warning=trace.residual_warning,
    )


# ============================================================
#  DISPATCH
# ============================================================

_LATENT_SOLVERS = {
    "hard": solve_hard,
    "relaxed": solve_relaxed,
    "sparse": solve_sparse,
    "sparse-tv": solve_sparse_tv,
    "pgd": solve_pgd,
}

_IMAGE_SOLVERS = {
    "tikhonov": solve_tikhonov,
    "tv": solve_tv,
}


def solve(spec: SolveSpec) -> SolveResult:
    """
    Run the method named by spec.method. Generator-backed methods run
    spec.restarts times (restart k seeded with spec.seed + k) and the run with
    the lowest final objective wins; ties go to the lowest restart index.
    """
    started = time.perf_counter()

    if spec.method in _IMAGE_SOLVERS:
        result = _IMAGE_SOLVERS[spec.method](spec)
        result.restart_objectives = [result.final_objective]
    else:
        runner = _LATENT_SOLVERS[spec.method]
        runs = []
        for k in range(spec.restarts):
            run = runner(spec, initial_latent(spec, k))
            run.restart = k
            if not np.isfinite(run.final_objective):
                raise NumericalAbort(f"{spec.method}: restart {k} ended with objective {run.final_objective}")
            logger.debug(f"[Solver] {spec.method} restart {k} objective={run.final_objective:.6g}")
            runs.append(run)

        finals = [run.final_objective for run in runs]
        result = runs[int(np.argmin(finals))]
        result.restart_objectives = finals

    result.wall_ms = (time.perf_counter() - started) * 1000.0
    logger.info(
        f"[Solver] {spec.method} lam={spec.lam:g} mu={spec.mu:g}: objective={result.final_objective:.6g} "
        f"discrepancy={result.discrepancy:.6g} iterations={result.iterations} ({result.wall_ms:.0f} ms)"
    )
    return result


def deviation_gradient_norm(result: SolveResult) -> float:
    """||grad u|| of the deviation part of a split solve."""
    if result.u is None:
        return 0.0
    return float(np.linalg.norm(gradient(result.u)))
