# autodiff/tensor.py

"""
Dense float64 tensors with tape-based reverse-mode differentiation.

Every operation whose inputs require gradients is recorded on the innermost
open `Tape` (a context manager). Outside a tape the same operations run as
plain numpy arithmetic, which is how generators are evaluated in inference.
"""

import logging
import threading
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int, Sequence]

_local = threading.local()


def _tape_stack() -> List["Tape"]:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def current_tape() -> Optional["Tape"]:
    stack = _tape_stack()
    return stack[-1] if stack else None


# ============================================================
#  TENSOR
# ============================================================

class Tensor:
    """Immutable n-dimensional float64 array, optionally a node of a tape."""

    __slots__ = ("data", "requires_grad", "name", "_node")

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.array(data, dtype=np.float64)
        arr.setflags(write=False)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._node: Optional["Node"] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return np.array(self.data)

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, name=self.name)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{flag}{label})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


# ============================================================
#  TAPE
# ============================================================

@dataclass
class Node:
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    vjp: Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]
    index: int = -1
    tape: Optional["Tape"] = field(default=None, repr=False)


class Tape:
    """
    Ordered record of differentiable operations. Nodes are appended as they are
    executed, so every node's inputs precede it.

    A tape is owned by one thread; open one per loss evaluation:

        with Tape() as tape:
            loss = ...
        grads = backward(loss, tape)
    """

    def __init__(self):
        self.nodes: List[Node] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        return False

    def record(self, node: Node) -> None:
        node.index = len(self.nodes)
        node.tape = self
        self.nodes.append(node)

    def __len__(self):
        return len(self.nodes)


def record(op: str, data: np.ndarray, inputs: Sequence[Tensor], vjp) -> Tensor:
    """
    Wrap `data` as the output of `op`. The output joins the current tape only
    when some input requires gradients and a tape is open.
    """
    out = Tensor(data)
    if any(t.requires_grad for t in inputs):
        tape = current_tape()
        if tape is not None:
            out.requires_grad = True
            node = Node(op=op, inputs=tuple(inputs), output=out, vjp=vjp)
            tape.record(node)
            out._node = node
    return out


def backward(
    loss: Tensor,
    tape: Tape,
    leaves: Optional[Mapping[str, Tensor]] = None,
) -> Dict[str, Tensor]:
    """
    Reverse pass from a scalar `loss`.

    Returns a gradient per named leaf: the entries of `leaves` when given
    (zero for leaves the loss does not depend on), otherwise every named
    requires_grad leaf that appears on the tape.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not np.all(np.isfinite(loss.data)):
        raise ValueError(f"backward got a non-finite loss: {loss.item()}")

    node = loss._node
    if node is None or node.tape is not tape:
        raise ValueError("loss was not recorded on this tape")

    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    found: Dict[str, Tensor] = {}

    for current in reversed(tape.nodes[: node.index + 1]):
        g = grads.pop(id(current.output), None)
        if g is None:
            continue

        input_grads = current.vjp(g)
        for inp, ig in zip(current.inputs, input_grads):
            if ig is None or not inp.requires_grad:
                continue
            if inp._node is None and inp.name and leaves is None:
                found.setdefault(inp.name, inp)
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + ig
            else:
                grads[key] = np.asarray(ig, dtype=np.float64)

    targets = dict(leaves) if leaves is not None else found
    out: Dict[str, Tensor] = {}
    for name, leaf in targets.items():
        g = grads.get(id(leaf))
        out[name] = Tensor(np.zeros(leaf.shape) if g is None else g.reshape(leaf.shape))
    return out


# ============================================================
#  ELEMENTWISE / REDUCTION OPS
# ============================================================

def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum `g` down to `shape`, undoing numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return record(
        "add",
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return record(
        "sub",
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return record(
        "mul",
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def scale(a: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    return record("scale", a.data * factor, (a,), lambda g: (g * factor,))


def square(a: Tensor) -> Tensor:
    return record("square", a.data ** 2, (a,), lambda g: (2.0 * a.data * g,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return record("exp", out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise ValueError("log of a non-positive entry")
    return record("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def sum_all(a: Tensor) -> Tensor:
    return record("sum", np.array(a.data.sum()), (a,), lambda g: (np.full(a.shape, float(g)),))


def mean_all(a: Tensor) -> Tensor:
    n = a.size
    return record("mean", np.array(a.data.mean()), (a,), lambda g: (np.full(a.shape, float(g) / n),))


def apply_operator(x: Tensor, operator) -> Tensor:
    """
    Apply a linear forward model to each sample of a batch (N, H, W). The
    vector-Jacobian product is the operator adjoint.
    """
    if x.shape[1:] != tuple(operator.input_shape):
        raise ValueError(
            f"operator {operator.kind} expects samples of shape {operator.input_shape}, got {x.shape[1:]}"
        )
    out = np.stack([operator.apply(sample) for sample in x.data])

    def vjp(g):
        return (np.stack([operator.adjoint(gs) for gs in g]),)

    return record("operator", out, (x,), vjp)


def with_gradient(value: float, inputs: Sequence[Tensor], grads: Sequence[np.ndarray], op: str = "custom") -> Tensor:
    """
    A scalar whose gradient with respect to `inputs` is given explicitly.
    Used for terms differentiated outside the tape (the critic gradient penalty).
    """
    grads = [np.asarray(g, dtype=np.float64) for g in grads]
    return record(op, np.array(float(value)), tuple(inputs), lambda g: tuple(float(g) * gi for gi in grads))
