import tempfile

import numpy as np
from django.test import SimpleTestCase, tag

from autodiff.checkpoint import dumps
from autodiff.layers import LayerSpec
from autodiff.params import ParamSet
from autodiff.tensor import Tape, Tensor, backward, square, sub, sum_all
from datasets.shapes import Dataset, ShapesConfig, generate_shapes
from genreg.exceptions import NumericalAbort

from .architectures import Architecture, build_architecture
from .losses import (
    ae_loss,
    gradient_penalty,
    kl_normal,
    vae_loss,
    vae_loss_terms,
    wgan_losses,
)
from .networks import DiscriminatorModel, EncoderModel, GeneratorModel, build_models, generate
from .store import load_models, save_models
from .training import TrainConfig, TrainedModels, train


def _linear_architecture(kind="ae", side=4, latent_dim=16, critic_hidden=None):
    """Affine encoder/generator/critic on tiny images, for closed-form checks."""
    pixels = side * side
    generator = [
        LayerSpec(kind="dense", name="gen.fc", in_features=latent_dim, out_features=pixels),
        LayerSpec(kind="reshape", shape=(side, side)),
    ]
    encoder = [LayerSpec(kind="reshape", shape=(pixels,))]
    heads = [LayerSpec(kind="dense", name="enc.z", in_features=pixels, out_features=latent_dim)]
    if kind == "vae":
        heads = [
            LayerSpec(kind="dense", name="enc.mu", in_features=pixels, out_features=latent_dim),
            LayerSpec(kind="dense", name="enc.logvar", in_features=pixels, out_features=latent_dim),
        ]
    critic = [LayerSpec(kind="reshape", shape=(pixels,))]
    if critic_hidden:
        critic += [
            LayerSpec(kind="dense", name="disc.fc", in_features=pixels, out_features=critic_hidden),
            LayerSpec(kind="tanh"),
            LayerSpec(kind="dense", name="disc.out", in_features=critic_hidden, out_features=1),
        ]
    else:
        critic.append(LayerSpec(kind="dense", name="disc.out", in_features=pixels, out_features=1))

    return Architecture(
        name=f"linear-{kind}",
        kind=kind,
        image_shape=(side, side),
        latent_dim=latent_dim,
        generator=generator,
        encoder=encoder if kind != "gan" else [],
        encoder_heads=heads if kind != "gan" else [],
        discriminator=critic if kind == "gan" else [],
    )


def _small_shapes(count, seed=0):
    return generate_shapes(ShapesConfig(image_size=16, count=count, seed=seed))


class ArchitectureTests(SimpleTestCase):
    def test_all_kinds_share_the_generator(self):
        archs = [build_architecture(kind, 32, 10) for kind in ("ae", "vae", "gan")]
        self.assertEqual(archs[0].generator, archs[1].generator)
        self.assertEqual(archs[1].generator, archs[2].generator)

    def test_mnist_sized_generator(self):
        arch = build_architecture("vae", 28, 8)
        generator, encoder, critic = build_models(arch, seed=0)
        self.assertEqual(generator.images(np.zeros((2, 8))).shape, (2, 28, 28))
        self.assertIsNone(critic)
        self.assertTrue(encoder.is_variational)


class GenerateTests(SimpleTestCase):
    def setUp(self):
        self.generator, _, _ = build_models(build_architecture("ae", 16, 3), seed=5)

    def test_outputs_lie_in_unit_interval(self):
        z = np.random.default_rng(0).standard_normal((1000, 3)) * 3.0
        images = self.generator.images(z)
        self.assertGreaterEqual(images.min(), 0.0)
        self.assertLessEqual(images.max(), 1.0)

    def test_wrong_latent_length_rejected(self):
        with self.assertRaises(ValueError):
            generate(self.generator, np.zeros(4))

    def test_inference_is_repeatable(self):
        z = np.array([0.3, -1.2, 0.7])
        np.testing.assert_array_equal(generate(self.generator, z).data, generate(self.generator, z).data)
        np.testing.assert_array_equal(generate(self.generator, z).data, self.generator.image(z))

    def test_latent_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        target = rng.uniform(size=(16, 16))
        z0 = rng.standard_normal(3)

        def objective(z):
            return float(np.sum((self.generator.image(z) - target) ** 2))

        zt = Tensor(z0, requires_grad=True, name="z")
        with Tape() as tape:
            loss = sum_all(square(sub(generate(self.generator, zt), target)))
        grad = backward(loss, tape, leaves={"z": zt})["z"].data

        h = 1e-5
        numeric = np.array([
            (objective(z0 + h * e) - objective(z0 - h * e)) / (2 * h) for e in np.eye(3)
        ])
        self.assertLessEqual(np.linalg.norm(grad - numeric) / np.linalg.norm(numeric), 1e-4)

    def test_pullback_matches_tape_gradient(self):
        z0 = np.array([0.1, 0.2, -0.4])
        cotangent = np.random.default_rng(1).standard_normal((16, 16))
        x, c, jtc = self.generator.value_and_pullback(z0, lambda image: cotangent)

        zt = Tensor(z0, requires_grad=True, name="z")
        with Tape() as tape:
            loss = sum_all(generate(self.generator, zt) * cotangent)
        expected = backward(loss, tape, leaves={"z": zt})["z"].data
        np.testing.assert_allclose(jtc, expected, rtol=1e-12, atol=1e-14)
        np.testing.assert_array_equal(x, self.generator.image(z0))


class AutoencoderLossTests(SimpleTestCase):
    def _models(self, kind="ae"):
        arch = _linear_architecture(kind)
        generator, encoder, _ = build_models(arch, seed=0)
        return arch, generator, encoder

    def test_identity_composition_gives_zero_loss(self):
        arch, generator, encoder = self._models()
        encoder = encoder.with_params(ParamSet({"enc.z.weight": np.eye(16), "enc.z.bias": np.zeros(16)}))
        generator = generator.with_params(ParamSet({"gen.fc.weight": np.eye(16), "gen.fc.bias": np.zeros(16)}))
        batch = np.random.default_rng(0).uniform(size=(5, 4, 4))
        self.assertAlmostEqual(ae_loss(batch, encoder, generator).item(), 0.0, places=12)

    def test_zero_generator_gives_squared_norm(self):
        arch, generator, encoder = self._models()
        generator = generator.with_params(ParamSet({"gen.fc.weight": np.zeros((16, 16)), "gen.fc.bias": np.zeros(16)}))
        x = np.random.default_rng(1).uniform(size=(1, 4, 4))
        self.assertAlmostEqual(ae_loss(x, encoder, generator).item(), float(np.sum(x ** 2)), places=12)

    def test_loss_matches_explicit_forward_pass(self):
        generator, encoder, _ = build_models(build_architecture("ae", 16, 4), seed=3)
        batch = _small_shapes(6).images
        recon = generator.images(encoder.encode(batch))
        expected = np.mean(np.sum((batch - recon) ** 2, axis=(1, 2)))
        self.assertAlmostEqual(ae_loss(batch, encoder, generator).item(), expected, delta=1e-12)

    def test_shape_mismatch_rejected(self):
        arch, generator, encoder = self._models()
        with self.assertRaises(ValueError):
            ae_loss(np.zeros((2, 5, 5)), encoder, generator)


class KLTests(SimpleTestCase):
    def test_matching_distribution_is_zero(self):
        self.assertEqual(kl_normal(np.zeros(4), np.ones(4)).item(), 0.0)

    def test_unit_mean_shift(self):
        self.assertAlmostEqual(kl_normal([1.0], [1.0]).item(), 0.5)

    def test_nonnegative_on_random_inputs(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            mu = rng.standard_normal(6)
            var = rng.uniform(0.05, 4.0, size=6)
            self.assertGreaterEqual(kl_normal(mu, var).item(), 0.0)

    def test_nonpositive_variance_rejected(self):
        with self.assertRaises(ValueError):
            kl_normal([0.0, 0.0], [1.0, 0.0])


class VAELossTests(SimpleTestCase):
    def setUp(self):
        self.generator, self.encoder, _ = build_models(build_architecture("vae", 16, 4), seed=1)
        self.batch = _small_shapes(5, seed=2).images

    def test_total_is_sum_of_terms(self):
        reconstruction, kl = vae_loss_terms(self.batch, self.encoder, self.generator, 0.1, seed=3)
        total = vae_loss(self.batch, self.encoder, self.generator, 0.1, seed=3)
        self.assertAlmostEqual(total.item(), reconstruction.item() + kl.item(), delta=1e-12)

    def test_seeded_loss_is_deterministic(self):
        a = vae_loss(self.batch, self.encoder, self.generator, 0.1, seed=9).item()
        b = vae_loss(self.batch, self.encoder, self.generator, 0.1, seed=9).item()
        self.assertEqual(a, b)

    def test_zero_variance_reconstruction_matches_ae_loss(self):
        rho = 0.25
        reconstruction, _ = vae_loss_terms(self.batch, self.encoder, self.generator, rho, seed=0, zero_variance=True)
        ae = ae_loss(self.batch, self.encoder, self.generator).item()
        self.assertAlmostEqual(reconstruction.item() * 2 * rho ** 2, ae, delta=1e-12)

    def test_large_rho_leaves_only_kl(self):
        reconstruction, kl = vae_loss_terms(self.batch, self.encoder, self.generator, 1e8, seed=0)
        total = vae_loss(self.batch, self.encoder, self.generator, 1e8, seed=0)
        self.assertLess(reconstruction.item(), 1e-12)
        self.assertAlmostEqual(total.item(), kl.item(), delta=1e-10)

    def test_nonpositive_rho_rejected(self):
        with self.assertRaises(ValueError):
            vae_loss(self.batch, self.encoder, self.generator, 0.0, seed=0)


class WGANLossTests(SimpleTestCase):
    def _gan(self, critic_hidden=None):
        arch = _linear_architecture("gan", latent_dim=3, critic_hidden=critic_hidden)
        generator, _, critic = build_models(arch, seed=0)
        return generator, critic

    def test_zero_critic_penalty_is_one(self):
        generator, critic = self._gan()
        critic = critic.with_params(ParamSet({k: np.zeros(v) for k, v in critic.params.shapes().items()}))
        real = np.random.default_rng(0).uniform(size=(4, 4, 4))
        c_loss, g_loss = wgan_losses(real, generator, critic, gp_weight=10.0, seed=1)
        self.assertAlmostEqual(c_loss.item(), 10.0, places=12)
        self.assertEqual(g_loss.item(), 0.0)

    def test_unit_norm_linear_critic_has_no_penalty(self):
        generator, critic = self._gan()
        w = np.random.default_rng(3).standard_normal((16, 1))
        critic = critic.with_params(ParamSet({"disc.out.weight": w / np.linalg.norm(w), "disc.out.bias": np.zeros(1)}))
        points = np.random.default_rng(4).uniform(size=(6, 4, 4))
        value, grads = gradient_penalty(critic, points)
        self.assertLess(value, 1e-20)

    def test_generator_loss_is_negative_mean_score(self):
        generator, critic = self._gan()
        real = np.random.default_rng(5).uniform(size=(3, 4, 4))
        _, g_loss = wgan_losses(real, generator, critic, seed=7)
        z = np.random.default_rng(7).standard_normal((3, 3))
        expected = -np.mean(critic.scores(generator.images(z)))
        self.assertAlmostEqual(g_loss.item(), expected, delta=1e-12)

    def test_penalty_parameter_gradient_matches_finite_differences(self):
        generator, critic = self._gan(critic_hidden=5)
        points = np.random.default_rng(6).uniform(size=(4, 4, 4))
        _, grads = gradient_penalty(critic, points)

        base = critic.params.arrays()
        h = 1e-6
        rng = np.random.default_rng(7)
        for name in base:
            idx = tuple(rng.integers(0, s) for s in base[name].shape)
            plus, minus = base[name].copy(), base[name].copy()
            plus[idx] += h
            minus[idx] -= h
            up = gradient_penalty(critic, points, critic.params.with_values({name: plus}))[0]
            down = gradient_penalty(critic, points, critic.params.with_values({name: minus}))[0]
            numeric = (up - down) / (2 * h)
            with self.subTest(param=name):
                self.assertAlmostEqual(grads[name][idx], numeric, delta=1e-4 * max(1.0, abs(numeric)))


class TrainingTests(SimpleTestCase):
    def test_zero_epochs_returns_initial_model(self):
        dataset = _small_shapes(4)
        config = TrainConfig(epochs=0, seed=3)
        trained = train("ae", dataset, config)
        initial, _, _ = build_models(trained.architecture, seed=3)
        self.assertEqual(dumps(trained.generator.params.arrays()), dumps(initial.params.arrays()))
        self.assertEqual(trained.history, [])

    def test_ae_training_reduces_loss(self):
        dataset = _small_shapes(20, seed=1)
        trained = train("ae", dataset, TrainConfig(epochs=15, batch_size=10, lr=3e-3, seed=0))
        self.assertEqual(len(trained.history), 15)
        self.assertLess(trained.history[-1]["loss"], trained.history[0]["loss"])

    def test_training_is_deterministic(self):
        dataset = _small_shapes(8, seed=2)
        config = TrainConfig(epochs=2, batch_size=4, seed=11)
        first = train("vae", dataset, config)
        second = train("vae", dataset, config)
        for a, b in zip(first.networks(), second.networks()):
            self.assertEqual(dumps(a.params.arrays()), dumps(b.params.arrays()))

    def test_nan_loss_aborts_with_position(self):
        images = _small_shapes(4).images.copy()
        images[0, 3, 3] = np.nan
        dataset = Dataset(images=images, split="train", provenance="shapes")
        with self.assertRaisesMessage(NumericalAbort, "epoch 1, batch 0"):
            train("ae", dataset, TrainConfig(epochs=1, batch_size=4))

    def test_gan_smoke_run(self):
        dataset = _small_shapes(8, seed=3)
        trained = train("gan", dataset, TrainConfig(epochs=1, batch_size=4, critic_steps=2))
        self.assertEqual(len(trained.history), 1)
        self.assertTrue(np.isfinite(trained.history[0]["critic"]))
        self.assertTrue(np.isfinite(trained.history[0]["generator"]))

    def test_mismatched_architecture_rejected(self):
        dataset = _small_shapes(2)
        with self.assertRaises(ValueError):
            train("ae", dataset, TrainConfig(epochs=0), architecture=build_architecture("ae", 32, 10))

    @tag("slow")
    def test_ae_on_fifty_shapes_two_hundred_epochs(self):
        dataset = generate_shapes(ShapesConfig(count=50, seed=0))
        trained = train("ae", dataset, TrainConfig(epochs=200, batch_size=25, seed=0))
        self.assertLess(trained.history[-1]["loss"], trained.history[0]["loss"])

    @tag("slow")
    def test_vae_terms_in_first_ten_epochs(self):
        dataset = generate_shapes(ShapesConfig(count=200, seed=0))
        trained = train("vae", dataset, TrainConfig(epochs=10, batch_size=32, seed=0))
        self.assertTrue(all(np.isfinite(r["kl"]) for r in trained.history))
        self.assertLess(trained.history[-1]["reconstruction"], trained.history[0]["reconstruction"])


class StoreTests(SimpleTestCase):
    def test_reload_reproduces_generation_bit_exactly(self):
        dataset = _small_shapes(4)
        trained = train("vae", dataset, TrainConfig(epochs=1, batch_size=4, seed=2))
        before = trained.generator.image(np.zeros(trained.architecture.latent_dim))
        with tempfile.TemporaryDirectory() as tmp:
            save_models(trained, tmp)
            loaded = load_models(tmp)

        after = loaded.generator.image(np.zeros(loaded.architecture.latent_dim))
        self.assertEqual(before.tobytes(), after.tobytes())
        self.assertEqual(loaded.kind, "vae")
        self.assertIsInstance(loaded.encoder, EncoderModel)
        self.assertEqual(loaded.history, trained.history)

    def test_gan_checkpoint_keeps_critic(self):
        arch = _linear_architecture("gan", latent_dim=3)
        generator, _, critic = build_models(arch, seed=0)

        trained = TrainedModels(kind="gan", architecture=arch, generator=generator, config=TrainConfig(), critic=critic)
        with tempfile.TemporaryDirectory() as tmp:
            save_models(trained, tmp)
            loaded = load_models(tmp)
        self.assertIsInstance(loaded.critic, DiscriminatorModel)
        self.assertIsInstance(loaded.generator, GeneratorModel)
        np.testing.assert_array_equal(loaded.critic.params["disc.out.weight"].data, critic.params["disc.out.weight"].data)
