import numpy as np
from django.test import SimpleTestCase
from pydantic import ValidationError

from .base import IdentityOperator, adjoint_mismatch, operator_norm
from .convolution import ConvolutionOperator, conv_adjoint, conv_apply, gaussian_kernel
from .noise import NoiseModel, add_noise, morozov_target
from .problems import ProblemConfig, build_operator
from .radon import RadonGeometry, RadonOperator, radon_apply, radon_backproject
from .sensing import gaussian_sensing


def _operators():
    return {
        "convolution": ConvolutionOperator(gaussian_kernel(5, 1.0), (16, 16)),
        "sensing": gaussian_sensing(60, (16, 16), seed=4),
        "radon": RadonOperator(16),
        "radon-nearest": RadonOperator(16, RadonGeometry.for_image(16, interpolation="nearest")),
    }


class OperatorPropertyTests(SimpleTestCase):
    def test_adjoint_identity(self):
        for name, op in _operators().items():
            rng = np.random.default_rng(0)
            worst = max(adjoint_mismatch(op, rng) for _ in range(100))
            with self.subTest(operator=name):
                self.assertLessEqual(worst, 1e-8)

    def test_linearity(self):
        for name, op in _operators().items():
            rng = np.random.default_rng(1)
            for _ in range(20):
                x1, x2 = rng.standard_normal(op.input_shape), rng.standard_normal(op.input_shape)
                a, b = rng.standard_normal(2)
                lhs = op.apply(a * x1 + b * x2)
                rhs = a * op.apply(x1) + b * op.apply(x2)
                with self.subTest(operator=name):
                    self.assertLessEqual(np.linalg.norm(lhs - rhs) / np.linalg.norm(rhs), 1e-10)

    def test_normal_operator_is_positive_semidefinite(self):
        rng = np.random.default_rng(2)
        op = RadonOperator(12)
        for _ in range(20):
            x = rng.standard_normal(op.input_shape)
            self.assertGreaterEqual(float(np.vdot(op.normal(x), x)), 0.0)

    def test_operator_norm_of_identity_and_matrix(self):
        self.assertAlmostEqual(operator_norm(IdentityOperator((4, 4))), 1.0, places=10)
        op = gaussian_sensing(20, 30, seed=1)
        expected = np.linalg.norm(op.matrix, 2)
        self.assertAlmostEqual(operator_norm(op, iterations=2000, tol=1e-14), expected, delta=1e-6 * expected)

    def test_shape_checked(self):
        with self.assertRaises(ValueError):
            IdentityOperator((4, 4)).apply(np.zeros((3, 3)))


class ConvolutionTests(SimpleTestCase):
    def test_size_one_kernel(self):
        np.testing.assert_array_equal(gaussian_kernel(1, 2.0), [[1.0]])

    def test_kernel_shape_properties(self):
        kernel = gaussian_kernel(5, 1.0)
        self.assertEqual(kernel.argmax(), 12)
        np.testing.assert_allclose(kernel, np.rot90(kernel))
        np.testing.assert_allclose(kernel, kernel.T)

    def test_kernel_is_normalised(self):
        for size, width in [(3, 0.5), (5, 1.0), (7, 3.0), (9, 0.2)]:
            self.assertAlmostEqual(gaussian_kernel(size, width).sum(), 1.0, delta=1e-12)

    def test_even_size_rejected(self):
        with self.assertRaises(ValueError):
            gaussian_kernel(4, 1.0)

    def test_identity_kernel(self):
        kernel = np.zeros((3, 3))
        kernel[1, 1] = 1.0
        image = np.random.default_rng(0).uniform(size=(8, 8))
        np.testing.assert_array_equal(conv_apply(image, kernel), image)

    def test_symmetric_kernel_is_self_adjoint(self):
        kernel = gaussian_kernel(5, 1.0)
        rng = np.random.default_rng(3)
        for _ in range(10):
            image = rng.standard_normal((12, 12))
            np.testing.assert_allclose(conv_adjoint(image, kernel), conv_apply(image, kernel), atol=1e-10)

    def test_asymmetric_kernel_adjoint(self):
        kernel = np.random.default_rng(5).standard_normal((3, 3))
        op = ConvolutionOperator(kernel, (9, 7))
        rng = np.random.default_rng(6)
        self.assertLessEqual(max(adjoint_mismatch(op, rng) for _ in range(100)), 1e-8)

    def test_kernel_larger_than_image_rejected(self):
        with self.assertRaises(ValueError):
            ConvolutionOperator(gaussian_kernel(7, 1.0), (5, 5))


class SensingTests(SimpleTestCase):
    def test_identity_override(self):
        op = gaussian_sensing(16, (4, 4), matrix=np.eye(16))
        image = np.arange(16.0).reshape(4, 4)
        np.testing.assert_array_equal(op.apply(image), image.ravel())
        np.testing.assert_array_equal(op.adjoint(image.ravel()), image)

    def test_column_norms_concentrate(self):
        op = gaussian_sensing(150, (28, 28), seed=0)
        mean_norm = np.linalg.norm(op.matrix, axis=0).mean()
        self.assertLess(abs(mean_norm - 1.0), 0.1)

    def test_reproducible_from_seed(self):
        np.testing.assert_array_equal(gaussian_sensing(10, 20, seed=3).matrix, gaussian_sensing(10, 20, seed=3).matrix)

    def test_invalid_sizes_rejected(self):
        with self.assertRaises(ValueError):
            gaussian_sensing(0, 10)


class RadonTests(SimpleTestCase):
    def test_default_geometry(self):
        geometry = RadonGeometry.for_image(32)
        self.assertEqual(geometry.n_angles, 32)
        self.assertEqual(geometry.n_detectors, 47)

    def test_zero_image(self):
        geometry = RadonGeometry.for_image(10)
        np.testing.assert_array_equal(radon_apply(np.zeros((10, 10)), geometry), 0.0)

    def test_uniform_disc_profiles(self):
        size = 32
        yy, xx = np.mgrid[0:size, 0:size]
        centre = (size - 1) / 2
        disc = (((yy - centre) ** 2 + (xx - centre) ** 2) <= 10 ** 2).astype(float)
        geometry = RadonGeometry.for_image(size)
        sinogram = radon_apply(disc, geometry)

        mass = sinogram.sum(axis=1)
        self.assertLessEqual((mass.max() - mass.min()) / mass.mean(), 0.01)
        np.testing.assert_allclose(sinogram, sinogram[:, ::-1], atol=1e-10)

    def test_backprojection_is_transpose(self):
        geometry = RadonGeometry(n_angles=7, n_detectors=15)
        rng = np.random.default_rng(9)
        x = rng.standard_normal((10, 10))
        y = rng.standard_normal((7, 15))
        lhs = np.vdot(radon_apply(x, geometry), y)
        rhs = np.vdot(x, radon_backproject(y, geometry, 10))
        self.assertLessEqual(abs(lhs - rhs) / abs(lhs), 1e-8)

    def test_non_square_image_rejected(self):
        with self.assertRaises(ValueError):
            radon_apply(np.zeros((8, 9)), RadonGeometry.for_image(8))

    def test_geometry_validation(self):
        with self.assertRaises(ValidationError):
            RadonGeometry(n_angles=0, n_detectors=5)


class NoiseTests(SimpleTestCase):
    def test_zero_sigma_is_identity(self):
        data = np.arange(5.0)
        np.testing.assert_array_equal(add_noise(data, NoiseModel(sigma=0.0, seed=1)), data)

    def test_empirical_std(self):
        data = np.zeros(10_000)
        noisy = add_noise(data, NoiseModel(sigma=0.1, seed=2))
        self.assertLess(abs(noisy.std() - 0.1), 0.005)

    def test_seeded(self):
        noise = NoiseModel(sigma=0.3, seed=5)
        np.testing.assert_array_equal(add_noise(np.ones(7), noise), add_noise(np.ones(7), noise))

    def test_negative_sigma_rejected(self):
        with self.assertRaises(ValidationError):
            NoiseModel(sigma=-0.1)

    def test_morozov_target(self):
        self.assertEqual(morozov_target(NoiseModel(sigma=0.0), 10), 0.0)
        self.assertEqual(morozov_target(NoiseModel(sigma=1.0), 1), 1.0)
        self.assertAlmostEqual(morozov_target(NoiseModel(sigma=0.1), 400), 2.0, places=12)


class ProblemFactoryTests(SimpleTestCase):
    def test_builds_each_problem(self):
        shapes = {
            "deconvolution": (16, 16),
            "compressed-sensing": (150,),
            "tomography": (16, 24),
            "denoising": (16, 16),
        }
        for kind, output_shape in shapes.items():
            op = build_operator(ProblemConfig(kind=kind), (16, 16))
            with self.subTest(kind=kind):
                self.assertEqual(op.output_shape, output_shape)
                self.assertEqual(op.input_shape, (16, 16))

    def test_default_noise_levels(self):
        self.assertEqual(ProblemConfig(kind="compressed-sensing").noise_sigma, 0.05)
        self.assertEqual(ProblemConfig(kind="tomography", sigma=0.2).noise_sigma, 0.2)

    def test_unknown_key_rejected(self):
        with self.assertRaises(ValidationError):
            ProblemConfig(kind="tomography", angles=3)
