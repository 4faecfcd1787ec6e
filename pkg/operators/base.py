# operators/base.py

import logging
from abc import ABC, abstractmethod
from typing import Tuple

import numpy as np

logger = logging.getLogger(__name__)


class LinearOperator(ABC):
    """
    A: X -> Y with an exact adjoint. Instances are immutable after
    construction and apply/adjoint are pure, so one operator can be shared by
    concurrent solves.
    """

    kind: str = "linear"

    def __init__(self, input_shape: Tuple[int, ...], output_shape: Tuple[int, ...]):
        self.input_shape = tuple(int(s) for s in input_shape)
        self.output_shape = tuple(int(s) for s in output_shape)

    @property
    def input_size(self) -> int:
        return int(np.prod(self.input_shape))

    @property
    def output_size(self) -> int:
        return int(np.prod(self.output_shape))

    def _checked(self, value, shape, what: str) -> np.ndarray:
        value = np.asarray(value, dtype=np.float64)
        if value.shape != shape:
            raise ValueError(f"{self.kind} operator {what} expects shape {shape}, got {value.shape}")
        return value

    def apply(self, x) -> np.ndarray:
        return self._apply(self._checked(x, self.input_shape, "apply"))

    def adjoint(self, y) -> np.ndarray:
        return self._adjoint(self._checked(y, self.output_shape, "adjoint"))

    def normal(self, x) -> np.ndarray:
        """A^T A x."""
        return self.adjoint(self.apply(x))

    @abstractmethod
    def _apply(self, x: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def _adjoint(self, y: np.ndarray) -> np.ndarray: ...

    def describe(self) -> dict:
        return {"kind": self.kind, "input_shape": list(self.input_shape), "output_shape": list(self.output_shape)}

    def __repr__(self):
        return f"{type(self).__name__}({self.input_shape} -> {self.output_shape})"


class IdentityOperator(LinearOperator):
    kind = "identity"

    def __init__(self, shape: Tuple[int, ...]):
        super().__init__(shape, shape)

    def _apply(self, x):
        return x.copy()

    def _adjoint(self, y):
        return y.copy()


def power_iteration(normal, shape: Tuple[int, ...], iterations: int = 200, seed: int = 0, tol: float = 1e-10) -> float:
    """Largest eigenvalue of a symmetric positive semidefinite map given as `normal(v)`."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(shape)
    v /= np.linalg.norm(v)
    estimate = 0.0

    for _ in range(iterations):
        w = normal(v)
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            return 0.0
        v = w / norm
        if abs(norm - estimate) <= tol * norm:
            estimate = norm
            break
        estimate = norm

    return estimate


def operator_norm(operator: LinearOperator, iterations: int = 200, seed: int = 0, tol: float = 1e-10) -> float:
    """Power-iteration estimate of ||A|| = sqrt(largest eigenvalue of A^T A)."""
    return float(np.sqrt(power_iteration(operator.normal, operator.input_shape, iterations, seed, tol)))


def adjoint_mismatch(operator: LinearOperator, rng: np.random.Generator) -> float:
    """Relative error of <Ax, y> = <x, A^T y> for one random pair."""
    x = rng.standard_normal(operator.input_shape)
    y = rng.standard_normal(operator.output_shape)
    lhs = float(np.vdot(operator.apply(x), y))
    rhs = float(np.vdot(x, operator.adjoint(y)))
    return abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)
