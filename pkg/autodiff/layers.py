# autodiff/layers.py

import logging
from typing import Literal, Mapping, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from pydantic import BaseModel, ConfigDict
from scipy.special import expit

from .tensor import Tensor, record

logger = logging.getLogger(__name__)

LayerKind = Literal[
    "dense",
    "conv2d",
    "conv_transpose2d",
    "leaky_relu",
    "relu",
    "sigmoid",
    "tanh",
    "reshape",
    "dropout",
]

PARAMETRIC = {"dense", "conv2d", "conv_transpose2d"}


# ------------------------------------------------------------
# Layer descriptor
# ------------------------------------------------------------
class LayerSpec(BaseModel):
    """
    One entry of an architecture descriptor.

    dense:             in_features, out_features
    conv2d:            in_channels, out_channels, kernel_size (odd), stride
    conv_transpose2d:  in_channels, out_channels, kernel_size (odd), stride
    leaky_relu:        alpha
    reshape:           shape (per sample, batch axis excluded)
    dropout:           p (active only in training)
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: LayerKind
    name: Optional[str] = None
    in_features: Optional[int] = None
    out_features: Optional[int] = None
    in_channels: Optional[int] = None
    out_channels: Optional[int] = None
    kernel_size: int = 3
    stride: int = 1
    alpha: float = 0.2
    shape: Optional[Tuple[int, ...]] = None
    p: float = 0.0

    @property
    def label(self) -> str:
        return f"'{self.name or '?'}' ({self.kind})"

    def param_shapes(self) -> dict:
        if self.kind == "dense":
            return {
                f"{self.name}.weight": (self.in_features, self.out_features),
                f"{self.name}.bias": (self.out_features,),
            }
        if self.kind == "conv2d":
            k = self.kernel_size
            return {
                f"{self.name}.weight": (self.out_channels, self.in_channels, k, k),
                f"{self.name}.bias": (self.out_channels,),
            }
        if self.kind == "conv_transpose2d":
            k = self.kernel_size
            return {
                f"{self.name}.weight": (self.in_channels, self.out_channels, k, k),
                f"{self.name}.bias": (self.out_channels,),
            }
        return {}


def init_layer_params(layer: LayerSpec, rng: np.random.Generator) -> dict:
    """He-style normal init for weights, zeros for biases."""
    out = {}
    for pname, shape in layer.param_shapes().items():
        if pname.endswith(".bias"):
            out[pname] = np.zeros(shape)
            continue
        if layer.kind == "dense":
            fan_in = shape[0]
        elif layer.kind == "conv2d":
            fan_in = shape[1] * shape[2] * shape[3]
        else:
            fan_in = shape[0] * shape[2] * shape[3] / max(layer.stride ** 2, 1)
        out[pname] = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
    return out


# ============================================================
#  CONVOLUTION KERNELS ('same' zero padding, odd kernels)
# ============================================================

def _im2col(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    windows = sliding_window_view(xp, (k, k), axis=(2, 3))
    return windows[:, :, ::stride, ::stride]  # (N, C, Ho, Wo, k, k)


def conv2d_forward(x: np.ndarray, w: np.ndarray, stride: int) -> np.ndarray:
    cols = _im2col(x, w.shape[-1], stride)
    return np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)


def conv2d_weight_vjp(x: np.ndarray, g: np.ndarray, k: int, stride: int) -> np.ndarray:
    cols = _im2col(x, k, stride)
    return np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))


def conv2d_input_vjp(g: np.ndarray, w: np.ndarray, stride: int, in_shape: Tuple[int, ...]) -> np.ndarray:
    n, c, h, wd = in_shape
    k = w.shape[-1]
    p = k // 2
    ho, wo = g.shape[2], g.shape[3]

    dcols = np.tensordot(g, w, axes=([1], [0]))  # (N, Ho, Wo, C, k, k)
    dxp = np.zeros((n, c, h + 2 * p, wd + 2 * p))
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dxp[:, :, p:p + h, p:p + wd]


# ============================================================
#  LAYER OPS
# ============================================================

def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    out = x.data @ weight.data + bias.data

    def vjp(g):
        return (
            g @ weight.data.T if x.requires_grad else None,
            x.data.T @ g if weight.requires_grad else None,
            g.sum(axis=0) if bias.requires_grad else None,
        )

    return record("dense", out, (x, weight, bias), vjp)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1) -> Tensor:
    out = conv2d_forward(x.data, weight.data, stride) + bias.data[None, :, None, None]
    k = weight.shape[-1]

    def vjp(g):
        return (
            conv2d_input_vjp(g, weight.data, stride, x.shape) if x.requires_grad else None,
            conv2d_weight_vjp(x.data, g, k, stride) if weight.requires_grad else None,
            g.sum(axis=(0, 2, 3)) if bias.requires_grad else None,
        )

    return record("conv2d", out, (x, weight, bias), vjp)


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1) -> Tensor:
    """Adjoint of conv2d in its input: (N, Cin, H, W) -> (N, Cout, H*stride, W*stride)."""
    n, _, h, w = x.shape
    out_shape = (n, weight.shape[1], h * stride, w * stride)
    out = conv2d_input_vjp(x.data, weight.data, stride, out_shape) + bias.data[None, :, None, None]
    k = weight.shape[-1]

    def vjp(g):
        return (
            conv2d_forward(g, weight.data, stride) if x.requires_grad else None,
            conv2d_weight_vjp(g, x.data, k, stride) if weight.requires_grad else None,
            g.sum(axis=(0, 2, 3)) if bias.requires_grad else None,
        )

    return record("conv_transpose2d", out, (x, weight, bias), vjp)


def leaky_relu(x: Tensor, alpha: float = 0.2) -> Tensor:
    slope = np.where(x.data > 0, 1.0, alpha)
    return record("leaky_relu", x.data * slope, (x,), lambda g: (g * slope,))


def relu(x: Tensor) -> Tensor:
    mask = (x.data > 0).astype(np.float64)
    return record("relu", x.data * mask, (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    out = expit(x.data)
    return record("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return record("tanh", out, (x,), lambda g: (g * (1.0 - out ** 2),))


def reshape(x: Tensor, shape: Tuple[int, ...]) -> Tensor:
    target = (x.shape[0],) + tuple(shape)
    return record("reshape", x.data.reshape(target), (x,), lambda g: (g.reshape(x.shape),))


def dropout(x: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    keep = (rng.random(x.shape) >= p).astype(np.float64) / (1.0 - p)
    return record("dropout", x.data * keep, (x,), lambda g: (g * keep,))


# ============================================================
#  DISPATCH
# ============================================================

def _param(params: Mapping[str, Tensor], layer: LayerSpec, suffix: str, expected) -> Tensor:
    key = f"{layer.name}.{suffix}"
    if key not in params:
        raise ValueError(f"Layer {layer.label} has no parameter '{key}'")
    t = params[key]
    if tuple(t.shape) != tuple(expected):
        raise ValueError(f"Layer {layer.label}: parameter '{key}' has shape {t.shape}, expected {tuple(expected)}")
    return t


def _check_rank(x: Tensor, layer: LayerSpec, rank: int, what: str):
    if x.ndim != rank:
        raise ValueError(f"Layer {layer.label} expects input {what}, got shape {x.shape}")


def apply_layer(
    x: Tensor,
    layer: LayerSpec,
    params: Optional[Mapping[str, Tensor]] = None,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Apply one layer to a batch. Shape mismatches raise ValueError naming the layer and shapes."""
    params = params or {}
    shapes = layer.param_shapes()

    if layer.kind == "dense":
        _check_rank(x, layer, 2, f"(N, {layer.in_features})")
        if x.shape[1] != layer.in_features:
            raise ValueError(f"Layer {layer.label} expects {layer.in_features} features, got shape {x.shape}")
        w = _param(params, layer, "weight", shapes[f"{layer.name}.weight"])
        b = _param(params, layer, "bias", shapes[f"{layer.name}.bias"])
        return dense(x, w, b)

    if layer.kind in ("conv2d", "conv_transpose2d"):
        _check_rank(x, layer, 4, f"(N, {layer.in_channels}, H, W)")
        if x.shape[1] != layer.in_channels:
            raise ValueError(f"Layer {layer.label} expects {layer.in_channels} channels, got shape {x.shape}")
        if layer.kernel_size % 2 == 0:
            raise ValueError(f"Layer {layer.label} needs an odd kernel size, got {layer.kernel_size}")
        w = _param(params, layer, "weight", shapes[f"{layer.name}.weight"])
        b = _param(params, layer, "bias", shapes[f"{layer.name}.bias"])
        if layer.kind == "conv2d":
            return conv2d(x, w, b, layer.stride)
        return conv_transpose2d(x, w, b, layer.stride)

    if layer.kind == "leaky_relu":
        return leaky_relu(x, layer.alpha)
    if layer.kind == "relu":
        return relu(x)
    if layer.kind == "sigmoid":
        return sigmoid(x)
    if layer.kind == "tanh":
        return tanh(x)

    if layer.kind == "reshape":
        if layer.shape is None or int(np.prod(layer.shape)) != int(np.prod(x.shape[1:])):
            raise ValueError(f"Layer {layer.label} cannot reshape {x.shape[1:]} into {layer.shape}")
        return reshape(x, layer.shape)

    if layer.kind == "dropout":
        if not training or layer.p <= 0:
            return x
        if rng is None:
            raise ValueError(f"Layer {layer.label} needs a random generator in training mode")
        return dropout(x, layer.p, rng)

    raise ValueError(f"Unknown layer kind: {layer.kind}")


def output_shape(layers, input_shape: Tuple[int, ...]) -> Tuple[int, ...]:
    """Per-sample output shape of a layer stack (batch axis excluded)."""
    shape = tuple(input_shape)
    for layer in layers:
        if layer.kind == "dense":
            shape = (layer.out_features,)
        elif layer.kind == "conv2d":
            h, w = shape[1], shape[2]
            shape = (layer.out_channels, -(-h // layer.stride), -(-w // layer.stride))
        elif layer.kind == "conv_transpose2d":
            shape = (layer.out_channels, shape[1] * layer.stride, shape[2] * layer.stride)
        elif layer.kind == "reshape":
            shape = tuple(layer.shape)
    return shape
