# solvers/tv.py

"""
Isotropic total variation on 2-D images and the primal-dual hybrid gradient
solvers built on it.

Gradients are forward differences with Neumann boundary (the last row and
column of each component are zero); `divergence` is the negative adjoint of
`gradient`, so <grad x, p> = -<x, div p>.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from operators.base import LinearOperator, power_iteration

logger = logging.getLogger(__name__)

# ||grad||^2 <= 8 for forward differences on a 2-D grid.
GRADIENT_NORM_SQ = 8.0

# Iterations between duality-gap evaluations in rof_pdhg.
GAP_CHECK_EVERY = 10


def gradient(x: np.ndarray) -> np.ndarray:
    """(H, W) -> (2, H, W): vertical and horizontal forward differences."""
    g = np.zeros((2,) + x.shape, dtype=np.float64)
    g[0, :-1, :] = x[1:, :] - x[:-1, :]
    g[1, :, :-1] = x[:, 1:] - x[:, :-1]
    return g


def divergence(p: np.ndarray) -> np.ndarray:
    p0, p1 = p[0], p[1]
    d = np.zeros(p0.shape, dtype=np.float64)
    rows, cols = p0.shape

    if rows > 1:
        d[0, :] += p0[0, :]
        d[1:-1, :] += p0[1:-1, :] - p0[:-2, :]
        d[-1, :] -= p0[-2, :]

    if cols > 1:
        d[:, 0] += p1[:, 0]
        d[:, 1:-1] += p1[:, 1:-1] - p1[:, :-2]
        d[:, -1] -= p1[:, -2]
    return d


def tv_norm(x: np.ndarray) -> float:
    g = gradient(np.asarray(x, dtype=np.float64))
    return float(np.sqrt(g[0] ** 2 + g[1] ** 2).sum())


def project_ball(p: np.ndarray, radius: float) -> np.ndarray:
    """Pointwise projection of a vector field onto {|p(i, j)|_2 <= radius}."""
    if radius <= 0:
        return np.zeros_like(p)
    magnitude = np.sqrt(p[0] ** 2 + p[1] ** 2)
    return p / np.maximum(1.0, magnitude / radius)[None]


# ============================================================
#  ROF DENOISING (prox of alpha * TV)
# ============================================================

@dataclass
class ROFResult:
    x: np.ndarray
    p: np.ndarray
    gap: float
    iterations: int


def rof_gap(x: np.ndarray, p: np.ndarray, v: np.ndarray, alpha: float) -> float:
    """
    Duality gap of min_x 1/2 ||x - v||^2 + alpha TV(x) for a feasible dual
    field p (|p| <= alpha pointwise):

        P(x) = 1/2 ||x - v||^2 + alpha TV(x)
        D(p) = 1/2 ||v||^2 - 1/2 ||v + div p||^2
    """
    primal = 0.5 * float(np.sum((x - v) ** 2)) + alpha * tv_norm(x)
    dual = 0.5 * float(np.sum(v ** 2)) - 0.5 * float(np.sum((v + divergence(p)) ** 2))
    return max(primal - dual, 0.0)


def rof_pdhg(
    v: np.ndarray,
    alpha: float,
    iterations: int = 100,
    tol: float = 1e-8,
    p0: Optional[np.ndarray] = None,
    gap_tol: Optional[float] = None,
) -> ROFResult:
    """
    Inner solve of the TV prox by PDHG with K = grad. The data term is
    1-strongly convex, so step sizes follow the accelerated schedule
    theta = 1 / sqrt(1 + 2 tau), tau <- theta tau, sigma <- sigma / theta.

    With `gap_tol` the loop stops once the duality gap is at most gap_tol
    (checked every GAP_CHECK_EVERY iterations); without it, on a relative
    change below `tol`. `iterations` caps the loop either way. `p0`
    warm-starts the dual field; it is projected onto the feasible set of
    the current alpha first.
    """
    v = np.asarray(v, dtype=np.float64)
    if alpha < 0:
        raise ValueError(f"TV weight must be non-negative, got {alpha}")
    if alpha == 0 or v.size == 1:
        return ROFResult(v.copy(), np.zeros((2,) + v.shape), 0.0, 0)

    sigma = tau = 0.99 / np.sqrt(GRADIENT_NORM_SQ)

    if p0 is not None and p0.shape == (2,) + v.shape:
        p = project_ball(p0, alpha)
        x = v + divergence(p)
    else:
        p = np.zeros((2,) + v.shape)
        x = v.copy()

    if gap_tol is not None:
        gap = rof_gap(x, p, v, alpha)
        if gap <= gap_tol:
            return ROFResult(x, p, gap, 0)

    x_bar = x.copy()
    done = 0
    for done in range(1, iterations + 1):
        p = project_ball(p + sigma * gradient(x_bar), alpha)
        x_old = x
        x = (x + tau * divergence(p) + tau * v) / (1.0 + tau)
        theta = 1.0 / np.sqrt(1.0 + 2.0 * tau)
        tau, sigma = theta * tau, sigma / theta
        x_bar = x + theta * (x - x_old)

        if gap_tol is None:
            if np.linalg.norm(x - x_old) <= tol * max(np.linalg.norm(x), 1.0):
                break
        elif done % GAP_CHECK_EVERY == 0 and rof_gap(x, p, v, alpha) <= gap_tol:
            break

    return ROFResult(x, p, rof_gap(x, p, v, alpha), done)


# ============================================================
#  TV-REGULARISED RECONSTRUCTION
# ============================================================

@dataclass
class PDHGTrace:
    objective: List[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    residual: float = float("inf")
    residual_warning: bool = False
    step: float = 0.0


def tv_objective(operator: LinearOperator, y: np.ndarray, x: np.ndarray, lam: float) -> float:
    r = operator.apply(x) - y
    return float(np.vdot(r, r)) + lam * tv_norm(x)


def stacked_norm(operator: LinearOperator, seed: int = 0) -> float:
    """||K|| for K = [A; grad], from power iteration on A^T A - div grad."""
    largest = power_iteration(
        lambda v: operator.normal(v) - divergence(gradient(v)),
        operator.input_shape,
        iterations=500,
        seed=seed,
        tol=1e-8,
    )
    return float(np.sqrt(largest))


def pdhg_tv(
    operator: LinearOperator,
    y: np.ndarray,
    lam: float,
    x0: Optional[np.ndarray] = None,
    max_iter: int = 2000,
    tol: float = 1e-8,
    residual_tol: float = 1e-4,
) -> Tuple[np.ndarray, PDHGTrace]:
    """
    min_x ||Ax - y||^2 + lam TV(x) by PDHG on K = [A; grad] with step sizes
    sigma = tau = 0.99 / ||K||. The data term is kept unscaled, its conjugate
    prox is q <- (q + sigma A x_bar - sigma y) / (1 + sigma / 2).

    The trace reports the primal plus dual residual norm of the last
    iteration, which goes to zero at a saddle point. The dual of this
    problem carries the constraint A^T q = div p, so the duality gap of
    an iterate is infinite in general and is not used as a stopping test.
    """
    if len(operator.input_shape) != 2:
        raise ValueError(f"TV needs 2-D images, operator input shape is {operator.input_shape}")
    y = np.asarray(y, dtype=np.float64)

    norm_k = stacked_norm(operator)
    sigma = tau = 0.99 / norm_k
    trace = PDHGTrace(step=tau)

    x = operator.adjoint(y) if x0 is None else np.array(x0, dtype=np.float64)
    x_bar = x.copy()
    p = np.zeros((2,) + x.shape)
    q = np.zeros(operator.output_shape)
    trace.objective.append(tv_objective(operator, y, x, lam))

    for _ in range(max_iter):
        p_old, q_old, x_old = p, q, x
        p = project_ball(p + sigma * gradient(x_bar), lam)
        q = (q + sigma * operator.apply(x_bar) - sigma * y) / (1.0 + sigma / 2.0)
        x = x + tau * divergence(p) - tau * operator.adjoint(q)
        x_bar = 2.0 * x - x_old

        trace.iterations += 1
        trace.objective.append(tv_objective(operator, y, x, lam))

        dx = x_old - x
        dp, dq = p_old - p, q_old - q
        primal_residual = dx / tau - (-divergence(dp) + operator.adjoint(dq))
        dual_residual = np.concatenate([(dp / sigma - gradient(dx)).ravel(), (dq / sigma - operator.apply(dx)).ravel()])
        trace.residual = float(np.linalg.norm(primal_residual) + np.linalg.norm(dual_residual))

        if np.linalg.norm(dx) <= tol * max(float(np.linalg.norm(x)), np.finfo(np.float64).tiny):
            trace.converged = True
            break

    if trace.residual > residual_tol:
        trace.residual_warning = True
        logger.warning(f"[Solver] tv: primal-dual residual {trace.residual:.3e} above {residual_tol:g} after {trace.iterations} iterations")

    return x, trace
