import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from . import checkpoint
from .layers import LayerSpec, apply_layer, init_layer_params
from .params import ParamSet, adam_step
from .tensor import Tape, Tensor, backward, mul, scale, square, sum_all


def _rel_err(a, b):
    a, b = np.ravel(a), np.ravel(b)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom


def _layer_loss(layer, x, values, weights, seed=None):
    """sum(weights * layer(x)) under a fresh tape; returns (loss, tape, leaves)."""
    params = {k: Tensor(v, requires_grad=True, name=k) for k, v in values.items()}
    xt = Tensor(x, requires_grad=True, name="input")
    rng = np.random.default_rng(seed) if seed is not None else None
    with Tape() as tape:
        out = apply_layer(xt, layer, params, training=seed is not None, rng=rng)
        loss = sum_all(mul(out, weights))
    return loss, tape, {"input": xt, **params}


def _finite_difference(layer, x, values, weights, target, seed=None, h=1e-5):
    def evaluate(x_, values_):
        return _layer_loss(layer, x_, values_, weights, seed)[0].item()

    base = x if target == "input" else values[target]
    grad = np.zeros_like(base)
    for idx in np.ndindex(base.shape):
        plus, minus = base.copy(), base.copy()
        plus[idx] += h
        minus[idx] -= h
        if target == "input":
            grad[idx] = (evaluate(plus, values) - evaluate(minus, values)) / (2 * h)
        else:
            grad[idx] = (evaluate(x, {**values, target: plus}) - evaluate(x, {**values, target: minus})) / (2 * h)
    return grad


LAYER_CASES = {
    "dense": (LayerSpec(kind="dense", name="fc", in_features=5, out_features=3), (2, 5)),
    "conv2d": (LayerSpec(kind="conv2d", name="c", in_channels=2, out_channels=3, kernel_size=3), (2, 2, 5, 5)),
    "conv2d_stride2": (
        LayerSpec(kind="conv2d", name="c", in_channels=2, out_channels=2, kernel_size=3, stride=2),
        (2, 2, 6, 6),
    ),
    "conv_transpose2d": (
        LayerSpec(kind="conv_transpose2d", name="t", in_channels=2, out_channels=2, kernel_size=3, stride=2),
        (2, 2, 3, 3),
    ),
    "leaky_relu": (LayerSpec(kind="leaky_relu", alpha=0.2), (3, 4)),
    "relu": (LayerSpec(kind="relu"), (3, 4)),
    "sigmoid": (LayerSpec(kind="sigmoid"), (3, 4)),
    "tanh": (LayerSpec(kind="tanh"), (3, 4)),
    "reshape": (LayerSpec(kind="reshape", shape=(2, 6)), (3, 12)),
    "dropout": (LayerSpec(kind="dropout", p=0.3), (3, 4)),
}


class LayerForwardTests(SimpleTestCase):
    def test_dense_identity(self):
        layer = LayerSpec(kind="dense", name="fc", in_features=2, out_features=2)
        params = {"fc.weight": Tensor(np.eye(2)), "fc.bias": Tensor(np.zeros(2))}
        out = apply_layer(Tensor([[1.5, -2.0]]), layer, params)
        np.testing.assert_array_equal(out.data, [[1.5, -2.0]])

    def test_leaky_relu_piecewise(self):
        out = apply_layer(Tensor([-1.0, 3.0]), LayerSpec(kind="leaky_relu", alpha=0.2))
        np.testing.assert_allclose(out.data, [-0.2, 3.0])

    def test_conv2d_same_padding_center(self):
        layer = LayerSpec(kind="conv2d", name="c", in_channels=1, out_channels=1, kernel_size=3)
        params = {"c.weight": Tensor(np.ones((1, 1, 3, 3))), "c.bias": Tensor(np.zeros(1))}
        out = apply_layer(Tensor(np.ones((1, 1, 5, 5))), layer, params)
        self.assertEqual(out.shape, (1, 1, 5, 5))
        self.assertEqual(out.data[0, 0, 2, 2], 9.0)
        self.assertEqual(out.data[0, 0, 0, 0], 4.0)

    def test_transposed_conv_doubles_spatial_size(self):
        layer = LayerSpec(kind="conv_transpose2d", name="t", in_channels=3, out_channels=2, kernel_size=3, stride=2)
        params = {k: Tensor(v) for k, v in init_layer_params(layer, np.random.default_rng(0)).items()}
        out = apply_layer(Tensor(np.ones((4, 3, 7, 7))), layer, params)
        self.assertEqual(out.shape, (4, 2, 14, 14))

    def test_shape_mismatch_names_layer(self):
        layer = LayerSpec(kind="dense", name="stem", in_features=4, out_features=2)
        params = {k: Tensor(v) for k, v in init_layer_params(layer, np.random.default_rng(0)).items()}
        with self.assertRaisesMessage(ValueError, "'stem'"):
            apply_layer(Tensor(np.ones((1, 3))), layer, params)

    def test_dropout_is_inactive_outside_training(self):
        x = Tensor(np.ones((2, 3)))
        out = apply_layer(x, LayerSpec(kind="dropout", p=0.9))
        self.assertIs(out, x)


class GradientTests(SimpleTestCase):
    def test_quadratic_gradient(self):
        z = Tensor([3.0, 4.0], requires_grad=True, name="z")
        with Tape() as tape:
            loss = scale(sum_all(square(z)), 0.5)
        grads = backward(loss, tape)
        np.testing.assert_allclose(grads["z"].data, [3.0, 4.0])

    def test_constant_loss_gives_zero_gradient(self):
        z = Tensor([1.0, 2.0], requires_grad=True, name="z")
        other = Tensor([5.0], requires_grad=True, name="other")
        with Tape() as tape:
            loss = sum_all(square(other))
        grads = backward(loss, tape, leaves={"z": z})
        np.testing.assert_array_equal(grads["z"].data, [0.0, 0.0])

    def test_non_scalar_loss_rejected(self):
        z = Tensor([1.0, 2.0], requires_grad=True, name="z")
        with Tape() as tape:
            out = square(z)
        with self.assertRaises(ValueError):
            backward(out, tape)

    def test_every_layer_matches_finite_differences(self):
        for kind, (layer, in_shape) in LAYER_CASES.items():
            for trial in range(20):
                rng = np.random.default_rng(1000 * trial + len(kind))
                x = rng.standard_normal(in_shape)
                values = init_layer_params(layer, rng)
                seed = trial if kind == "dropout" else None
                out_shape = apply_layer(
                    Tensor(x), layer, {k: Tensor(v) for k, v in values.items()},
                    training=seed is not None, rng=np.random.default_rng(seed) if seed is not None else None,
                ).shape
                weights = rng.standard_normal(out_shape)

                loss, tape, leaves = _layer_loss(layer, x, values, weights, seed)
                grads = backward(loss, tape, leaves=leaves)

                for target in ["input", *values]:
                    numeric = _finite_difference(layer, x, values, weights, target, seed)
                    with self.subTest(kind=kind, trial=trial, target=target):
                        self.assertLessEqual(_rel_err(grads[target].data, numeric), 1e-4)

    def test_backward_is_linear(self):
        rng = np.random.default_rng(3)
        layer = LayerSpec(kind="conv2d", name="c", in_channels=1, out_channels=2, kernel_size=3)
        values = init_layer_params(layer, rng)
        x = rng.standard_normal((2, 1, 4, 4))
        wf, wg = rng.standard_normal((2, 2, 4, 4)), rng.standard_normal((2, 2, 4, 4))
        a, b = 0.7, -1.3

        def grads_for(weights):
            loss, tape, leaves = _layer_loss(layer, x, values, weights)
            return backward(loss, tape, leaves=leaves)

        gf, gg, gc = grads_for(wf), grads_for(wg), grads_for(a * wf + b * wg)
        for name in gc:
            np.testing.assert_allclose(gc[name].data, a * gf[name].data + b * gg[name].data, atol=1e-12, rtol=0)

    def test_replay_is_bit_identical(self):
        layer, in_shape = LAYER_CASES["conv_transpose2d"]
        rng = np.random.default_rng(11)
        values = init_layer_params(layer, rng)
        x = rng.standard_normal(in_shape)
        weights = rng.standard_normal((2, 2, 6, 6))

        first = _layer_loss(layer, x, values, weights)
        second = _layer_loss(layer, x, values, weights)
        self.assertEqual(first[0].item(), second[0].item())
        g1 = backward(*first)
        g2 = backward(*second)
        for name in g1:
            np.testing.assert_array_equal(g1[name].data, g2[name].data)

    def test_tensor_data_is_immutable(self):
        t = Tensor([1.0, 2.0])
        with self.assertRaises(ValueError):
            t.data[0] = 5.0


class AdamTests(SimpleTestCase):
    def test_zero_gradient_leaves_params_unchanged(self):
        params = ParamSet({"w": np.array([1.0, -2.0])})
        updated = adam_step(params, {"w": Tensor(np.zeros(2))})
        np.testing.assert_array_equal(updated["w"].data, [1.0, -2.0])
        self.assertEqual(updated.step, 1)

    def test_first_step_moves_by_learning_rate(self):
        params = ParamSet({"w": np.array([0.5])})
        updated = adam_step(params, {"w": Tensor([1.0])}, lr=0.1)
        self.assertAlmostEqual(updated["w"].item(), 0.4, places=6)

    def test_step_is_deterministic(self):
        params = ParamSet({"w": np.array([0.5, 0.25])})
        grads = {"w": Tensor([0.3, -0.1])}
        a = adam_step(params, grads)
        b = adam_step(params, grads)
        np.testing.assert_array_equal(a["w"].data, b["w"].data)
        np.testing.assert_array_equal(a.second_moment["w"], b.second_moment["w"])

    def test_missing_gradient_key_rejected(self):
        params = ParamSet({"w": np.zeros(1), "b": np.zeros(1)})
        with self.assertRaisesMessage(ValueError, "b"):
            adam_step(params, {"w": Tensor([0.0])})


class CheckpointTests(SimpleTestCase):
    def test_round_trip_is_bit_exact(self):
        rng = np.random.default_rng(5)
        tensors = {
            "gen.fc.weight": rng.standard_normal((3, 4)),
            "gen.fc.bias": rng.standard_normal(4),
            "scalar": np.array(np.pi),
        }
        with tempfile.TemporaryDirectory() as tmp:
            path = checkpoint.save_tensors(Path(tmp) / "model.grg", tensors)
            loaded = checkpoint.load_tensors(path)
            self.assertEqual(list(loaded), list(tensors))
            for name, value in tensors.items():
                self.assertEqual(loaded[name].tobytes(), np.asarray(value, dtype="<f8").tobytes())
            self.assertEqual(path.read_bytes(), checkpoint.dumps(loaded))

    def test_header_layout(self):
        payload = checkpoint.dumps({"ab": np.array([1.0])})
        self.assertEqual(payload[:4], b"GRG1")
        self.assertEqual(payload[4:8], (2).to_bytes(4, "little"))
        self.assertEqual(payload[8:10], b"ab")
        self.assertEqual(payload[10:14], (1).to_bytes(4, "little"))
        self.assertEqual(len(payload), 4 + 4 + 2 + 4 + 8 + 8)

    def test_bad_magic_rejected(self):
        with self.assertRaisesMessage(ValueError, "bad magic"):
            checkpoint.loads(b"NOPE")

    def test_truncated_payload_rejected(self):
        payload = checkpoint.dumps({"w": np.arange(6.0)})
        with self.assertRaisesMessage(ValueError, "truncated"):
            checkpoint.loads(payload[:-3], source="w.grg")
