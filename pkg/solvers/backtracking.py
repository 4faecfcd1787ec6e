# solvers/backtracking.py

"""
Backtracking first-order schemes over numpy arrays.

    gd_backtracking      gradient descent, one block
    alt_gd_backtracking  alternating gradient descent over two blocks
    palm_backtracking    proximal alternating linearised minimisation

Every block keeps its own Lipschitz estimate L. A trial step is rejected
(L <- L * eta1) while its sufficient-decrease test fails and L is shrunk
(L <- L * eta0) once a step is accepted. When the trial step becomes smaller
than the stopping tolerance before any acceptance, the block has stalled at
float resolution and the solver stops as converged.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from genreg.exceptions import NumericalAbort

logger = logging.getLogger(__name__)

ValueFn = Callable[..., float]
ValueGradFn = Callable[..., Tuple[float, np.ndarray]]
ProxFn = Callable[[np.ndarray, float], np.ndarray]

_TINY = np.finfo(np.float64).tiny
ROUNDING_SLACK = 1e-12


class BacktrackState(BaseModel):
    model_config = ConfigDict(extra="forbid")

    L: float = Field(1.0, gt=0)
    eta0: float = Field(0.9, gt=0, lt=1)
    eta1: float = Field(2.0, gt=1)
    L_max: float = Field(1e20, gt=0)

    @model_validator(mode="after")
    def _check_cap(self):
        if self.L_max < self.L:
            raise ValueError("L_max must be at least the initial L")
        return self


class StoppingRule(BaseModel):
    model_config = ConfigDict(extra="forbid")

    max_iter: int = Field(2000, ge=0)
    tol: float = Field(1e-8, gt=0)


@dataclass
class BacktrackTrace:
    objective: List[float] = field(default_factory=list)
    accepted: int = 0
    rejected: int = 0
    iterations: int = 0
    converged: bool = False
    stalled: bool = False
    lipschitz: List[float] = field(default_factory=list)


def relative_change(new: np.ndarray, old: np.ndarray) -> float:
    return float(np.linalg.norm(new - old) / max(np.linalg.norm(old), _TINY))


def _finite(value: float) -> bool:
    return bool(np.isfinite(value))


def _check_descent(trace: BacktrackTrace, what: str, allowance: float = 0.0):
    """`allowance` is an absolute error budget on top of rounding noise, for inexact prox steps."""
    if len(trace.objective) < 2:
        return
    previous, current = trace.objective[-2], trace.objective[-1]
    if current > previous + ROUNDING_SLACK * abs(previous) + allowance:
        raise NumericalAbort(
            f"{what}: objective increased from {previous!r} to {current!r} at iteration {trace.iterations}"
        )


# ============================================================
#  SINGLE BLOCK STEP (gradient)
# ============================================================

def _gradient_step(
    value: Callable[[np.ndarray], float],
    z: np.ndarray,
    fz: float,
    grad: np.ndarray,
    L: float,
    state: BacktrackState,
    tol: float,
    trace: BacktrackTrace,
    what: str,
):
    """
    One accepted step of z <- z - grad / L with the test

        reject while f(z - grad/L) >= f(z) - ||grad||^2 / (2L)

    Returns (z_new, f_new, L_new, moved).
    """
    gnorm2 = float(np.vdot(grad, grad))
    if gnorm2 == 0.0:
        return z, fz, L, False

    scale = max(float(np.linalg.norm(z)), _TINY)
    while True:
        trial = z - grad / L
        f_trial = value(trial)
        if _finite(f_trial) and f_trial < fz - gnorm2 / (2.0 * L):
            return trial, f_trial, L * state.eta0, True

        if _finite(f_trial) and np.sqrt(gnorm2) / L <= tol * scale:
            return z, fz, L, False

        L *= state.eta1
        trace.rejected += 1
        if L > state.L_max:
            raise NumericalAbort(
                f"{what}: Lipschitz estimate exceeded {state.L_max:g} without an acceptable step "
                f"(f={fz!r}, |grad|={np.sqrt(gnorm2):.3e})"
            )


# ============================================================
#  ALGORITHM: GRADIENT DESCENT WITH BACKTRACKING
# ============================================================

def gd_backtracking(
    value: Callable[[np.ndarray], float],
    value_and_grad: Callable[[np.ndarray], Tuple[float, np.ndarray]],
    z0: np.ndarray,
    state: Optional[BacktrackState] = None,
    stopping: Optional[StoppingRule] = None,
    check_descent: bool = False,
    label: str = "gd",
) -> Tuple[np.ndarray, BacktrackTrace]:
    state = state or BacktrackState()
    stopping = stopping or StoppingRule()
    trace = BacktrackTrace()

    z = np.array(z0, dtype=np.float64)
    fz, grad = value_and_grad(z)
    if not _finite(fz):
        raise NumericalAbort(f"{label}: objective is {fz} at the initial point")
    trace.objective.append(float(fz))
    L = state.L

    for _ in range(stopping.max_iter):
        z_new, f_new, L, moved = _gradient_step(value, z, fz, grad, L, state, stopping.tol, trace, label)
        if not moved:
            trace.converged = True
            trace.stalled = bool(np.any(grad))
            break

        trace.iterations += 1
        trace.accepted += 1
        change = relative_change(z_new, z)
        z = z_new
        fz, grad = value_and_grad(z)
        trace.objective.append(float(fz))
        trace.lipschitz.append(L)
        if check_descent:
            _check_descent(trace, label)

        if change < stopping.tol:
            trace.converged = True
            break

    logger.debug(
        f"[Solver] {label}: {trace.iterations} iterations, {trace.rejected} rejected trials, "
        f"objective={trace.objective[-1]:.6g}, converged={trace.converged}"
    )
    return z, trace


# ============================================================
#  ALGORITHM: ALTERNATING GRADIENT DESCENT WITH BACKTRACKING
# ============================================================

def alt_gd_backtracking(
    value: Callable[[np.ndarray, np.ndarray], float],
    grad_z: Callable[[np.ndarray, np.ndarray], Tuple[float, np.ndarray]],
    grad_x: Callable[[np.ndarray, np.ndarray], Tuple[float, np.ndarray]],
    z0: np.ndarray,
    x0: np.ndarray,
    states: Optional[Tuple[BacktrackState, BacktrackState]] = None,
    stopping: Optional[StoppingRule] = None,
    check_descent: bool = False,
    label: str = "alt-gd",
) -> Tuple[np.ndarray, np.ndarray, BacktrackTrace]:
    """Each outer iteration: one backtracked gradient step in z (x fixed), then one in x (z fixed)."""
    state_z, state_x = states or (BacktrackState(), BacktrackState())
    stopping = stopping or StoppingRule()
    trace = BacktrackTrace()

    z = np.array(z0, dtype=np.float64)
    x = np.array(x0, dtype=np.float64)
    f = value(z, x)
    if not _finite(f):
        raise NumericalAbort(f"{label}: objective is {f} at the initial point")
    trace.objective.append(float(f))
    Lz, Lx = state_z.L, state_x.L

    for _ in range(stopping.max_iter):
        fz, gz = grad_z(z, x)
        z_new, fz, Lz, moved_z = _gradient_step(
            lambda v: value(v, x), z, fz, gz, Lz, state_z, stopping.tol, trace, f"{label} z-block"
        )

        fx, gx = grad_x(z_new, x)
        x_new, fx, Lx, moved_x = _gradient_step(
            lambda v: value(z_new, v), x, fx, gx, Lx, state_x, stopping.tol, trace, f"{label} x-block"
        )

        if not (moved_z or moved_x):
            trace.converged = True
            break

        trace.iterations += 1
        trace.accepted += int(moved_z) + int(moved_x)
        change = max(relative_change(z_new, z), relative_change(x_new, x))
        z, x = z_new, x_new
        trace.objective.append(float(fx))
        trace.lipschitz.append(max(Lz, Lx))
        if check_descent:
            _check_descent(trace, label)

        if change < stopping.tol:
            trace.converged = True
            break

    logger.debug(
        f"[Solver] {label}: {trace.iterations} iterations, {trace.rejected} rejected trials, "
        f"objective={trace.objective[-1]:.6g}, converged={trace.converged}"
    )
    return z, x, trace


# ============================================================
#  ALGORITHM: PALM WITH BACKTRACKING
# ============================================================

def _prox_step(
    value: Callable[[np.ndarray], float],
    prox: ProxFn,
    v: np.ndarray,
    fv: float,
    grad: np.ndarray,
    L: float,
    state: BacktrackState,
    tol: float,
    trace: BacktrackTrace,
    what: str,
):
    """
    v~ = prox_{g/L}(v - grad/L), rejected while

        f(v~) > f(v) + grad . (v~ - v) + L/2 ||v~ - v||^2
    """
    scale = max(float(np.linalg.norm(v)), _TINY)
    while True:
        trial = prox(v - grad / L, 1.0 / L)
        step = trial - v
        step_norm = float(np.linalg.norm(step))
        if step_norm == 0.0:
            return v, False, L

        f_trial = value(trial)
        if _finite(f_trial) and step_norm <= tol * scale:
            return v, False, L
        bound = fv + float(np.vdot(grad, step)) + 0.5 * L * step_norm ** 2
        if _finite(f_trial) and f_trial <= bound:
            return trial, True, L * state.eta0

        L *= state.eta1
        trace.rejected += 1
        if L > state.L_max:
            raise NumericalAbort(
                f"{what}: Lipschitz estimate exceeded {state.L_max:g} without an acceptable step (f={fv!r})"
            )


def palm_backtracking(
    value: Callable[[np.ndarray, np.ndarray], float],
    grad_z: Callable[[np.ndarray, np.ndarray], Tuple[float, np.ndarray]],
    grad_u: Callable[[np.ndarray, np.ndarray], Tuple[float, np.ndarray]],
    g1: Callable[[np.ndarray], float],
    g2: Callable[[np.ndarray], float],
    prox1: ProxFn,
    prox2: ProxFn,
    z0: np.ndarray,
    u0: np.ndarray,
    states: Optional[Tuple[BacktrackState, BacktrackState]] = None,
    stopping: Optional[StoppingRule] = None,
    check_descent: bool = False,
    descent_allowance: Optional[Callable[[], float]] = None,
    label: str = "palm",
) -> Tuple[np.ndarray, np.ndarray, BacktrackTrace]:
    """
    Minimise f(z, u) + g1(z) + g2(u). `prox1(v, t)` and `prox2(v, t)` return
    prox_{t g}(v). The traced objective is the full f + g1 + g2.

    When a prox is only solved approximately, `descent_allowance()` returns
    its current error bound and the descent check tolerates that much increase.
    """
    state_z, state_u = states or (BacktrackState(), BacktrackState())
    stopping = stopping or StoppingRule()
    trace = BacktrackTrace()

    z = np.array(z0, dtype=np.float64)
    u = np.array(u0, dtype=np.float64)
    total = value(z, u) + g1(z) + g2(u)
    if not _finite(total):
        raise NumericalAbort(f"{label}: objective is {total} at the initial point")
    trace.objective.append(float(total))
    Lz, Lu = state_z.L, state_u.L

    for _ in range(stopping.max_iter):
        fz, gz = grad_z(z, u)
        z_new, moved_z, Lz = _prox_step(
            lambda v: value(v, u), prox1, z, fz, gz, Lz, state_z, stopping.tol, trace, f"{label} z-block"
        )

        fu, gu = grad_u(z_new, u)
        u_new, moved_u, Lu = _prox_step(
            lambda v: value(z_new, v), prox2, u, fu, gu, Lu, state_u, stopping.tol, trace, f"{label} u-block"
        )

        if not (moved_z or moved_u):
            trace.converged = True
            break

        trace.iterations += 1
        trace.accepted += int(moved_z) + int(moved_u)
        change = max(relative_change(z_new, z), relative_change(u_new, u) if np.any(u) else 0.0)
        if not np.any(u) and np.any(u_new):
            change = max(change, 1.0)
        z, u = z_new, u_new
        trace.objective.append(float(value(z, u) + g1(z) + g2(u)))
        trace.lipschitz.append(max(Lz, Lu))
        if check_descent:
            _check_descent(trace, label, allowance=descent_allowance() if descent_allowance else 0.0)

        if change < stopping.tol:
            trace.converged = True
            break

    logger.debug(
        f"[Solver] {label}: {trace.iterations} iterations, {trace.rejected} rejected trials, "
        f"objective={trace.objective[-1]:.6g}, converged={trace.converged}"
    )
    return z, u, trace
