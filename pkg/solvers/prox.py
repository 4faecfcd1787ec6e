# solvers/prox.py

"""prox_h(v) = argmin_x h(x) + 1/2 ||x - v||^2 for the regularisers used by the split methods."""

import logging

import numpy as np

from .tv import rof_pdhg

logger = logging.getLogger(__name__)


def prox_l1(v, tau: float) -> np.ndarray:
    """Soft thresholding, the prox of tau ||.||_1."""
    if tau < 0:
        raise ValueError(f"prox_l1 threshold must be non-negative, got {tau}")
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.maximum(np.abs(v) - tau, 0.0)


def prox_scaled_sqnorm(v, tau: float, mu: float) -> np.ndarray:
    """Prox of tau * mu ||.||^2: v / (1 + 2 tau mu)."""
    if tau < 0 or mu < 0:
        raise ValueError(f"prox_scaled_sqnorm needs tau, mu >= 0, got tau={tau}, mu={mu}")
    return np.asarray(v, dtype=np.float64) / (1.0 + 2.0 * tau * mu)


class TVProx:
    """
    Inexact prox of tau * lam * TV by inner PDHG iterations, stopped once the
    ROF duality gap is at most gap_tol * tau * lam.

    A call that ends above its tolerance doubles the iteration budget (up to
    `max_iterations`) and continues from its own dual field; later calls keep
    the larger budget. `last_error` is the gap divided by tau, which bounds
    how far the prox result is from optimal in the units of the outer
    objective.
    """

    def __init__(self, lam: float, iterations: int = 100, gap_tol: float = 1e-6, max_iterations: int = 5000):
        if iterations < 1 or max_iterations < iterations:
            raise ValueError(f"TV prox needs 1 <= iterations <= max_iterations, got {iterations}, {max_iterations}")
        self.lam = lam
        self.budget = iterations
        self.max_iterations = max_iterations
        self.gap_tol = gap_tol
        self.calls = 0
        self.unconverged = 0
        self.worst_gap = 0.0
        self.last_error = 0.0
        self.worst_error = 0.0
        self._dual = None

    def __call__(self, v: np.ndarray, tau: float) -> np.ndarray:
        alpha = tau * self.lam
        tol = self.gap_tol * alpha

        # warm start from the previous dual field
        result = rof_pdhg(v, alpha, iterations=self.budget, p0=self._dual, gap_tol=tol)
        while result.gap > tol and self.budget < self.max_iterations:
            self.budget = min(2 * self.budget, self.max_iterations)
            logger.debug(f"[Solver] TV prox gap {result.gap:.3e} above {tol:.3e}, budget now {self.budget}")
            result = rof_pdhg(v, alpha, iterations=self.budget, p0=result.p, gap_tol=tol)

        self._dual = result.p
        self.calls += 1
        self.unconverged += int(result.gap > tol)
        self.worst_gap = max(self.worst_gap, result.gap)
        self.last_error = result.gap / tau if tau > 0 else 0.0
        self.worst_error = max(self.worst_error, self.last_error)
        return result.x

    @property
    def gap_warning(self) -> bool:
        return self.unconverged > 0

    def report(self, label: str):
        if self.gap_warning:
            logger.warning(
                f"[Solver] {label}: inner TV prox missed its gap tolerance in {self.unconverged} of {self.calls} calls "
                f"(worst gap {self.worst_gap:.3e}, budget {self.budget} iterations)"
            )
