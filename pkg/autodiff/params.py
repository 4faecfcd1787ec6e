# autodiff/params.py

import logging
from typing import Dict, Iterator, Mapping, Optional, Tuple

import numpy as np

from .tensor import Tensor

logger = logging.getLogger(__name__)


class ParamSet(Mapping):
    """
    Named trainable tensors plus Adam moment accumulators and a step counter.

    Shapes are fixed at creation; `adam_step` returns a new ParamSet instead of
    mutating this one.
    """

    def __init__(
        self,
        values: Mapping[str, np.ndarray],
        first_moment: Optional[Mapping[str, np.ndarray]] = None,
        second_moment: Optional[Mapping[str, np.ndarray]] = None,
        step: int = 0,
    ):
        self._tensors: Dict[str, Tensor] = {}
        for name, value in values.items():
            if name in self._tensors:
                raise ValueError(f"duplicate parameter name: {name}")
            self._tensors[name] = Tensor(value, requires_grad=True, name=name)

        zeros = {name: np.zeros(t.shape) for name, t in self._tensors.items()}
        self.first_moment = dict(first_moment) if first_moment is not None else zeros
        self.second_moment = dict(second_moment) if second_moment is not None else dict(zeros)
        self.step = int(step)

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {name: t.shape for name, t in self._tensors.items()}

    def arrays(self) -> Dict[str, np.ndarray]:
        return {name: t.numpy() for name, t in self._tensors.items()}

    def with_values(self, values: Mapping[str, np.ndarray]) -> "ParamSet":
        """Same names, shapes and optimizer state, new values (snapshots for perturbation)."""
        for name, value in values.items():
            if name not in self._tensors:
                raise ValueError(f"unknown parameter name: {name}")
            if np.shape(value) != self._tensors[name].shape:
                raise ValueError(
                    f"parameter '{name}' has shape {self._tensors[name].shape}, got {np.shape(value)}"
                )
        merged = {name: values.get(name, t.data) for name, t in self._tensors.items()}
        return ParamSet(merged, self.first_moment, self.second_moment, self.step)

    def merged(self, other: "ParamSet") -> "ParamSet":
        """Union of two disjoint parameter sets (e.g. encoder + generator)."""
        overlap = set(self) & set(other)
        if overlap:
            raise ValueError(f"parameter sets overlap on {sorted(overlap)}")
        values = {**self.arrays(), **other.arrays()}
        m = {**self.first_moment, **other.first_moment}
        v = {**self.second_moment, **other.second_moment}
        return ParamSet(values, m, v, max(self.step, other.step))

    def subset(self, names) -> "ParamSet":
        names = list(names)
        return ParamSet(
            {n: self._tensors[n].data for n in names},
            {n: self.first_moment[n] for n in names},
            {n: self.second_moment[n] for n in names},
            self.step,
        )


def adam_step(
    params: ParamSet,
    grads: Mapping[str, Tensor],
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> ParamSet:
    """Adam with bias correction. `grads` must be keyed exactly like `params`."""
    missing = [name for name in params if name not in grads]
    if missing:
        raise ValueError(f"adam_step is missing gradients for {missing}")
    extra = [name for name in grads if name not in params]
    if extra:
        raise ValueError(f"adam_step got gradients for unknown parameters {extra}")

    step = params.step + 1
    correction1 = 1.0 - beta1 ** step
    correction2 = 1.0 - beta2 ** step

    values, first, second = {}, {}, {}
    for name in params:
        g = np.asarray(grads[name].data if isinstance(grads[name], Tensor) else grads[name], dtype=np.float64)
        m = beta1 * params.first_moment[name] + (1.0 - beta1) * g
        v = beta2 * params.second_moment[name] + (1.0 - beta2) * g * g
        m_hat = m / correction1
        v_hat = v / correction2
        values[name] = params[name].data - lr * m_hat / (np.sqrt(v_hat) + eps)
        first[name] = m
        second[name] = v

    return ParamSet(values, first, second, step)
