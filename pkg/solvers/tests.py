import numpy as np
from django.test import SimpleTestCase, override_settings, tag

from autodiff.layers import LayerSpec
from evaluation.metrics import psnr
from generative.architectures import Architecture
from generative.networks import build_models
from genreg.exceptions import NumericalAbort
from operators.base import IdentityOperator
from operators.convolution import ConvolutionOperator, gaussian_kernel
from operators.noise import NoiseModel, add_noise, morozov_target
from operators.radon import RadonOperator
from operators.sensing import gaussian_sensing

from .backtracking import BacktrackState, StoppingRule, alt_gd_backtracking, gd_backtracking, palm_backtracking
from .methods import SolveSpec, adjoint_estimate, deviation_gradient_norm, initial_latent, solve
from .prox import TVProx, prox_l1, prox_scaled_sqnorm
from .sweep import SweepCase, discrepancy_principle, lambda_grid, sweep, sweep_row, tune_parameters
from .tasks import run_solves
from .tv import divergence, gradient, pdhg_tv, rof_pdhg, tv_norm


def _toy_models(kind="ae", side=8, latent_dim=4, seed=0):
    """Dense sigmoid generator (and affine encoder) on side x side images."""
    pixels = side * side
    arch = Architecture(
        name=f"toy-{kind}",
        kind=kind,
        image_shape=(side, side),
        latent_dim=latent_dim,
        generator=[
            LayerSpec(kind="dense", name="gen.fc", in_features=latent_dim, out_features=pixels),
            LayerSpec(kind="sigmoid"),
            LayerSpec(kind="reshape", shape=(side, side)),
        ],
        encoder=[LayerSpec(kind="reshape", shape=(pixels,))] if kind != "gan" else [],
        encoder_heads=[LayerSpec(kind="dense", name="enc.z", in_features=pixels, out_features=latent_dim)]
        if kind != "gan"
        else [],
        discriminator=[
            LayerSpec(kind="reshape", shape=(pixels,)),
            LayerSpec(kind="dense", name="disc.out", in_features=pixels, out_features=1),
        ]
        if kind == "gan"
        else [],
    )
    generator, encoder, _ = build_models(arch, seed=seed)
    return generator, encoder


def _blur(side=8):
    return ConvolutionOperator(gaussian_kernel(3, 1.0), (side, side))


def _dense(operator):
    columns = []
    for k in range(operator.input_size):
        e = np.zeros(operator.input_size)
        e[k] = 1.0
        columns.append(operator.apply(e.reshape(operator.input_shape)).ravel())
    return np.stack(columns, axis=1)


def _tikhonov_oracle(operator, y, lam):
    A = _dense(operator)
    x = np.linalg.solve(A.T @ A + lam * np.eye(A.shape[1]), A.T @ y.ravel())
    return x.reshape(operator.input_shape)


class _ZeroGenerator:
    """G(z) = 0 for every z."""

    kind = "ae-decoder"

    def __init__(self, image_shape, latent_dim=3):
        self.image_shape = image_shape
        self.latent_dim = latent_dim

    def image(self, z):
        return np.zeros(self.image_shape)

    def value_and_pullback(self, z, cotangent_fn):
        x = np.zeros(self.image_shape)
        return x, cotangent_fn(x), np.zeros_like(z)


class GradientDescentTests(SimpleTestCase):
    def test_quadratic_converges(self):
        z, trace = gd_backtracking(
            lambda z: 0.5 * float(z @ z),
            lambda z: (0.5 * float(z @ z), z.copy()),
            np.full(5, 10.0),
            stopping=StoppingRule(max_iter=200),
        )
        self.assertLessEqual(np.linalg.norm(z), 1e-6)
        self.assertLessEqual(trace.iterations, 200)

    def test_accepted_steps_satisfy_decrease_test(self):
        _, trace = gd_backtracking(
            lambda z: 0.5 * float(z @ z),
            lambda z: (0.5 * float(z @ z), z.copy()),
            np.array([3.0, -4.0]),
            stopping=StoppingRule(max_iter=30),
        )
        # grad = z so ||grad||^2 = 2 f; L used for a step is the recorded value / eta0.
        for before, after, shrunk in zip(trace.objective, trace.objective[1:], trace.lipschitz):
            used = shrunk / 0.9
            self.assertLessEqual(after, before - before / used + 1e-12 * before)

    def test_constant_stops_on_zero_gradient(self):
        z0 = np.array([1.0, 2.0])
        z, trace = gd_backtracking(lambda z: 3.0, lambda z: (3.0, np.zeros_like(z)), z0)
        np.testing.assert_array_equal(z, z0)
        self.assertEqual(trace.iterations, 0)
        self.assertTrue(trace.converged)

    def test_lipschitz_overflow_aborts(self):
        with self.assertRaises(NumericalAbort):
            gd_backtracking(
                lambda z: float("inf"),
                lambda z: (1.0, np.ones_like(z)),
                np.ones(3),
                state=BacktrackState(L_max=1e3),
            )

    def test_non_finite_trials_abort_at_default_cap(self):
        with self.assertRaises(NumericalAbort):
            gd_backtracking(lambda z: float("nan"), lambda z: (1.0, np.ones_like(z)), np.ones(3))

    def test_increasing_trace_is_caught(self):
        calls = iter(range(1, 100))

        def value_and_grad(z):
            return float(next(calls)), np.ones_like(z)

        with self.assertRaises(NumericalAbort):
            gd_backtracking(lambda z: -1.0, value_and_grad, np.zeros(2), check_descent=True)

    def test_invalid_constants_rejected(self):
        with self.assertRaises(ValueError):
            BacktrackState(eta0=1.5)
        with self.assertRaises(ValueError):
            BacktrackState(eta1=0.5)


class AlternatingDescentTests(SimpleTestCase):
    def test_separable_blocks(self):
        z, x, _ = alt_gd_backtracking(
            lambda z, x: 0.5 * float(z @ z + x @ x),
            lambda z, x: (0.5 * float(z @ z + x @ x), z.copy()),
            lambda z, x: (0.5 * float(z @ z + x @ x), x.copy()),
            np.full(3, 5.0),
            np.full(4, -2.0),
            stopping=StoppingRule(max_iter=300),
        )
        self.assertLessEqual(np.linalg.norm(z), 1e-6)
        self.assertLessEqual(np.linalg.norm(x), 1e-6)

    def test_coupled_quadratic(self):
        c = np.array([1.0, -2.0, 0.5])

        def value(z, x):
            return 0.5 * float((z - c) @ (z - c)) + 0.5 * float((x - z) @ (x - z))

        z, x, trace = alt_gd_backtracking(
            value,
            lambda z, x: (value(z, x), (z - c) - (x - z)),
            lambda z, x: (value(z, x), x - z),
            np.zeros(3),
            np.zeros(3),
            stopping=StoppingRule(max_iter=5000),
            check_descent=True,
        )
        np.testing.assert_allclose(z, c, atol=1e-6)
        np.testing.assert_allclose(x, c, atol=1e-6)
        self.assertTrue(all(b >= a for b, a in zip(trace.objective, trace.objective[1:])))


class PALMTests(SimpleTestCase):
    def test_zero_regularisers_behave_like_alternating_descent(self):
        identity = lambda v, t: v  # noqa: E731
        z, u, _ = palm_backtracking(
            lambda z, u: 0.5 * float(z @ z + u @ u),
            lambda z, u: (0.5 * float(z @ z + u @ u), z.copy()),
            lambda z, u: (0.5 * float(z @ z + u @ u), u.copy()),
            lambda z: 0.0,
            lambda u: 0.0,
            identity,
            identity,
            np.full(3, 2.0),
            np.full(2, -1.0),
            stopping=StoppingRule(max_iter=300),
        )
        self.assertLessEqual(np.linalg.norm(z), 1e-6)
        self.assertLessEqual(np.linalg.norm(u), 1e-6)

    def test_lasso_matches_coordinate_descent(self):
        rng = np.random.default_rng(0)
        A = rng.standard_normal((20, 10))
        y = rng.standard_normal(20)
        lam = 0.5

        def value(z, u):
            r = A @ u - y
            return 0.5 * float(r @ r)

        _, u, trace = palm_backtracking(
            value,
            lambda z, u: (value(z, u), np.zeros_like(z)),
            lambda z, u: (value(z, u), A.T @ (A @ u - y)),
            lambda z: 0.0,
            lambda u: lam * float(np.abs(u).sum()),
            lambda v, t: v,
            lambda v, t: prox_l1(v, t * lam),
            np.zeros(1),
            np.zeros(10),
            stopping=StoppingRule(max_iter=20000, tol=1e-12),
            check_descent=True,
        )

        oracle = np.zeros(10)
        col_sq = (A ** 2).sum(axis=0)
        for _ in range(5000):
            for j in range(10):
                r = y - A @ oracle + A[:, j] * oracle[j]
                oracle[j] = prox_l1(A[:, j] @ r, lam) / col_sq[j]

        np.testing.assert_allclose(u, oracle, atol=1e-5)
        self.assertGreater(trace.iterations, 0)


class ProxTests(SimpleTestCase):
    def test_l1_closed_form(self):
        np.testing.assert_array_equal(prox_l1(np.array([1.0, -2.0]), 0.0), [1.0, -2.0])
        self.assertEqual(prox_l1(2.0, 0.5), 1.5)
        self.assertEqual(prox_l1(-0.3, 0.5), 0.0)

    def test_l1_matches_grid_search(self):
        grid = np.linspace(-3.0, 3.0, 600_001)
        spacing = grid[1] - grid[0]
        tau = 0.5
        for v in np.linspace(-2.0, 2.0, 9):
            best = grid[np.argmin(tau * np.abs(grid) + 0.5 * (grid - v) ** 2)]
            self.assertLessEqual(abs(prox_l1(v, tau) - best), spacing)

    def test_scaled_sqnorm_closed_form(self):
        self.assertEqual(prox_scaled_sqnorm(3.0, 1.0, 0.5), 1.5)
        np.testing.assert_array_equal(prox_scaled_sqnorm(np.array([1.0, 2.0]), 3.0, 0.0), [1.0, 2.0])

    def test_scaled_sqnorm_matches_grid_search(self):
        grid = np.linspace(-3.0, 3.0, 600_001)
        spacing = grid[1] - grid[0]
        tau, mu = 0.7, 1.3
        for v in np.linspace(-2.0, 2.0, 9):
            best = grid[np.argmin(tau * mu * grid ** 2 + 0.5 * (grid - v) ** 2)]
            self.assertLessEqual(abs(prox_scaled_sqnorm(v, tau, mu) - best), spacing)

    def test_negative_parameters_rejected(self):
        with self.assertRaises(ValueError):
            prox_l1(1.0, -0.1)
        with self.assertRaises(ValueError):
            prox_scaled_sqnorm(1.0, 1.0, -1.0)


def _fgp_rof(v, alpha, iterations=20000):
    """Fast gradient projection on the dual of min 1/2||x - v||^2 + alpha TV(x)."""
    p = np.zeros((2,) + v.shape)
    q, t = p.copy(), 1.0
    for _ in range(iterations):
        g = gradient(v + alpha * divergence(q))
        step = q + g / (8.0 * alpha)
        magnitude = np.sqrt(step[0] ** 2 + step[1] ** 2)
        p_new = step / np.maximum(1.0, magnitude)[None]
        t_new = (1.0 + np.sqrt(1.0 + 4.0 * t * t)) / 2.0
        q = p_new + ((t - 1.0) / t_new) * (p_new - p)
        p, t = p_new, t_new
    return v + alpha * divergence(p)


class TotalVariationTests(SimpleTestCase):
    def test_divergence_is_negative_adjoint(self):
        rng = np.random.default_rng(1)
        for shape in [(5, 7), (1, 6), (6, 1)]:
            x = rng.standard_normal(shape)
            p = rng.standard_normal((2,) + shape)
            self.assertAlmostEqual(float(np.vdot(gradient(x), p)), -float(np.vdot(x, divergence(p))), places=10)

    def test_tv_of_constant_is_zero(self):
        self.assertEqual(tv_norm(np.full((4, 4), 0.3)), 0.0)

    def test_constant_image_is_kept(self):
        y = np.full((6, 6), 0.4)
        for lam in (0.01, 1.0, 10.0):
            x, trace = pdhg_tv(IdentityOperator((6, 6)), y, lam)
            np.testing.assert_allclose(x, y, atol=1e-12)
            self.assertTrue(trace.converged)

    def test_step_signal_denoising(self):
        rng = np.random.default_rng(2)
        clean = np.zeros((1, 20))
        clean[0, 10:] = 1.0
        noisy = clean + 0.05 * rng.standard_normal(clean.shape)
        x, _ = pdhg_tv(IdentityOperator(noisy.shape), noisy, 0.1, max_iter=5000)
        self.assertEqual(int(np.argmax(np.abs(np.diff(x[0])))), 9)
        self.assertLessEqual(tv_norm(x), tv_norm(noisy))

    def test_denoising_matches_dual_projection_oracle(self):
        rng = np.random.default_rng(3)
        y = rng.uniform(size=(8, 8))
        lam = 0.2
        x, _ = pdhg_tv(IdentityOperator((8, 8)), y, lam, max_iter=20000, tol=1e-12)
        # ||x - y||^2 + lam TV(x) = 2 (1/2 ||x - y||^2 + lam/2 TV(x))
        oracle = _fgp_rof(y, lam / 2.0)
        self.assertLessEqual(np.linalg.norm(x - oracle) / np.linalg.norm(oracle), 1e-3)

    def test_residual_warning_at_budget(self):
        y = np.random.default_rng(4).uniform(size=(8, 8))
        _, trace = pdhg_tv(_blur(), y, 0.1, max_iter=2)
        self.assertTrue(trace.residual_warning)
        self.assertGreater(trace.residual, 1e-4)
        self.assertFalse(trace.converged)

    def test_rof_gap_is_small_after_many_iterations(self):
        v = np.random.default_rng(5).uniform(size=(8, 8))
        short = rof_pdhg(v, 0.1, iterations=5)
        long = rof_pdhg(v, 0.1, iterations=2000, tol=1e-14)
        self.assertLess(long.gap, short.gap)
        self.assertLess(long.gap, 1e-4)

    def test_rof_stops_at_gap_tolerance_for_every_weight(self):
        v = np.random.default_rng(7).uniform(size=(8, 8))
        for alpha in (0.1, 1.0, 10.0, 100.0):
            result = rof_pdhg(v, alpha, iterations=20000, gap_tol=1e-6 * alpha)
            with self.subTest(alpha=alpha):
                self.assertLessEqual(result.gap, 1e-6 * alpha)
                self.assertLess(result.iterations, 20000)

    def test_rof_warm_start_needs_no_more_iterations(self):
        v = np.random.default_rng(8).uniform(size=(6, 6))
        solved = rof_pdhg(v, 0.5, iterations=20000, gap_tol=1e-10)
        cold = rof_pdhg(v, 0.5, iterations=20000, gap_tol=1e-6)
        warm = rof_pdhg(v, 0.5, iterations=20000, gap_tol=1e-6, p0=solved.p)
        self.assertLessEqual(warm.gap, 1e-6)
        self.assertLessEqual(warm.iterations, cold.iterations)

    def test_tv_prox_grows_budget_and_warns_at_cap(self):
        prox = TVProx(lam=1.0, iterations=2, gap_tol=1e-12, max_iterations=4)
        prox(np.random.default_rng(6).uniform(size=(6, 6)), 0.5)
        self.assertEqual(prox.calls, 1)
        self.assertEqual(prox.budget, 4)
        self.assertTrue(prox.gap_warning)
        self.assertAlmostEqual(prox.last_error, prox.worst_gap / 0.5)

    def test_tv_prox_meets_tolerance_at_large_weight(self):
        prox = TVProx(lam=100.0)
        v = np.random.default_rng(9).uniform(size=(8, 8))
        x = prox(v, 0.5)
        self.assertFalse(prox.gap_warning)
        self.assertLessEqual(prox.worst_gap, 1e-6 * 50.0)
        np.testing.assert_allclose(x, np.full_like(v, v.mean()), atol=1e-2)

    def test_tv_prox_budget_validated(self):
        with self.assertRaises(ValueError):
            TVProx(lam=1.0, iterations=10, max_iterations=5)


class SolveSpecTests(SimpleTestCase):
    def test_generator_required(self):
        op = _blur()
        with self.assertRaises(ValueError):
            SolveSpec(operator=op, data=np.zeros((8, 8)), method="hard")

    def test_generator_rejected_for_baselines(self):
        generator, _ = _toy_models()
        with self.assertRaises(ValueError):
            SolveSpec(operator=_blur(), data=np.zeros((8, 8)), method="tikhonov", generator=generator)

    def test_positive_lambda_required(self):
        with self.assertRaises(ValueError):
            SolveSpec(operator=_blur(), data=np.zeros((8, 8)), method="tv", lam=0.0)

    def test_data_shape_checked(self):
        with self.assertRaises(ValueError):
            SolveSpec(operator=_blur(), data=np.zeros((7, 8)), method="tikhonov")

    def test_default_restarts(self):
        ae, _ = _toy_models("ae")
        gan, _ = _toy_models("gan")
        data = np.zeros((8, 8))
        self.assertEqual(SolveSpec(operator=_blur(), data=data, method="hard", generator=ae).restarts, 1)
        self.assertEqual(SolveSpec(operator=_blur(), data=data, method="hard", generator=gan).restarts, 4)


class ClassicalMethodTests(SimpleTestCase):
    def test_tikhonov_identity_closed_form(self):
        y = np.random.default_rng(0).uniform(size=(8, 8))
        result = solve(SolveSpec(operator=IdentityOperator((8, 8)), data=y, method="tikhonov", lam=0.5))
        np.testing.assert_allclose(result.x, y / 1.5, rtol=1e-6)

    def test_tikhonov_matches_normal_equations(self):
        rng = np.random.default_rng(1)
        op = ConvolutionOperator(gaussian_kernel(5, 1.0), (16, 16))
        for trial in range(3):
            y = op.apply(rng.uniform(size=(16, 16))) + 0.05 * rng.standard_normal((16, 16))
            result = solve(SolveSpec(operator=op, data=y, method="tikhonov", lam=0.1))
            oracle = _tikhonov_oracle(op, y, 0.1)
            with self.subTest(trial=trial):
                self.assertLessEqual(np.linalg.norm(result.x - oracle) / np.linalg.norm(oracle), 1e-6)

    def test_tikhonov_norm_shrinks_with_lambda(self):
        op = gaussian_sensing(30, (8, 8), seed=2)
        y = op.apply(np.random.default_rng(3).uniform(size=(8, 8)))
        norms = [
            np.linalg.norm(solve(SolveSpec(operator=op, data=y, method="tikhonov", lam=lam)).x)
            for lam in lambda_grid(1e-2, 1e2, 5)
        ]
        self.assertTrue(all(a > b for a, b in zip(norms, norms[1:])))

    def test_tv_result_fields(self):
        y = np.random.default_rng(4).uniform(size=(8, 8))
        result = solve(SolveSpec(operator=_blur(), data=y, method="tv", lam=0.05))
        self.assertIsNotNone(result.residual)
        self.assertEqual(result.restart_objectives, [result.final_objective])
        self.assertGreater(result.wall_ms, 0.0)


@override_settings(GENREG_CHECK_DESCENT=True)
class GeneratorMethodTests(SimpleTestCase):
    def setUp(self):
        self.generator, self.encoder = _toy_models()
        self.op = _blur()
        self.z0 = np.random.default_rng(10).standard_normal(4)
        self.target = self.generator.image(self.z0)
        self.y = self.op.apply(self.target)

    def _spec(self, method, **kwargs):
        kwargs.setdefault("stopping", StoppingRule(max_iter=300))
        return SolveSpec(operator=self.op, data=self.y, method=method, generator=self.generator, **kwargs)

    def test_hard_planted_start(self):
        result = solve(self._spec("hard", lam=0.1, init="given", z0=self.z0))
        self.assertAlmostEqual(result.objective[0], 0.1 * float(self.z0 @ self.z0), places=12)
        np.testing.assert_array_equal(result.x, self.generator.image(result.z))

    def test_hard_latent_norm_shrinks_with_lambda(self):
        norms = []
        for lam in (0.01, 0.1, 1.0, 10.0):
            result = solve(self._spec("hard", lam=lam, init="given", z0=self.z0))
            norms.append(np.linalg.norm(result.z))
        self.assertTrue(all(a >= b for a, b in zip(norms, norms[1:])))

    def test_objective_traces_do_not_increase(self):
        for seed in range(5):
            for method in ("hard", "relaxed", "sparse"):
                result = solve(self._spec(method, lam=0.05, mu=0.5, seed=seed))
                with self.subTest(method=method, seed=seed):
                    self.assertTrue(np.all(np.diff(result.objective) <= 1e-12 * abs(result.objective[0])))

    def test_sparse_planted_start_keeps_zero_deviation(self):
        result = solve(self._spec("sparse", lam=1.0, mu=0.01, init="given", z0=self.z0))
        self.assertAlmostEqual(result.objective[0], 0.01 * float(self.z0 @ self.z0), places=12)
        self.assertEqual(int(np.count_nonzero(result.u)), 0)
        np.testing.assert_allclose(result.x, result.x_generator + result.u)

    def test_relaxed_returns_image_block(self):
        result = solve(self._spec("relaxed", lam=0.1, mu=0.5, seed=1))
        np.testing.assert_array_equal(result.x_generator, self.generator.image(result.z))
        np.testing.assert_allclose(result.u, result.x - result.x_generator)

    def test_relaxed_with_zero_generator_is_tikhonov(self):
        y = self.op.apply(np.random.default_rng(11).uniform(size=(8, 8)))
        spec = SolveSpec(
            operator=self.op,
            data=y,
            method="relaxed",
            lam=0.2,
            mu=0.0,
            generator=_ZeroGenerator((8, 8)),
            stopping=StoppingRule(max_iter=5000, tol=1e-12),
        )
        result = solve(spec)
        oracle = _tikhonov_oracle(self.op, y, 0.2)
        self.assertLessEqual(np.linalg.norm(result.x - oracle) / np.linalg.norm(oracle), 1e-5)

    def test_sparse_tv_lambda_sweep_flattens_deviation(self):
        norms = []
        for lam in (0.01, 0.1, 1.0, 10.0, 100.0):
            result = solve(self._spec("sparse-tv", lam=lam, mu=0.5, seed=2))
            with self.subTest(lam=lam):
                np.testing.assert_allclose(result.x, result.x_generator + result.u)
                self.assertFalse(result.tolerance_warning)
            norms.append(deviation_gradient_norm(result))
        self.assertTrue(all(b <= a + 1e-6 for a, b in zip(norms, norms[1:])), norms)
        self.assertLessEqual(norms[-1], 1e-3)

    def test_pgd_fixed_point(self):
        result = solve(self._spec("pgd", init="given", z0=self.z0))
        np.testing.assert_array_equal(result.x, self.target)
        np.testing.assert_array_equal(result.z, self.z0)
        self.assertTrue(result.converged)

    def test_pgd_discrepancy_trace(self):
        result = solve(self._spec("pgd", seed=3, stopping=StoppingRule(max_iter=30)))
        self.assertEqual(result.discrepancy, result.objective[-1])
        self.assertLess(result.objective[-1], result.objective[0])

    def test_restarts_are_deterministic(self):
        first = solve(self._spec("hard", lam=0.1, seed=5, restarts=3))
        second = solve(self._spec("hard", lam=0.1, seed=5, restarts=3))
        np.testing.assert_array_equal(first.x, second.x)
        self.assertEqual(first.restart_objectives, second.restart_objectives)
        self.assertEqual(len(first.restart_objectives), 3)
        self.assertEqual(first.restart, int(np.argmin(first.restart_objectives)))

    def test_restart_seeds(self):
        spec = self._spec("hard", seed=5, restarts=3)
        for k in range(3):
            np.testing.assert_array_equal(initial_latent(spec, k), np.random.default_rng(5 + k).standard_normal(4))

    def test_encoder_initialisation(self):
        spec = self._spec("hard", init="encoder", encoder=self.encoder)
        expected = self.encoder.encode(adjoint_estimate(self.op, self.y))
        np.testing.assert_array_equal(initial_latent(spec, 0), expected)
        np.testing.assert_array_equal(initial_latent(spec, 1), np.random.default_rng(1).standard_normal(4))

    def test_adjoint_estimate_on_identity(self):
        y = np.array([[0.2, 1.5], [-0.3, 0.7]])
        np.testing.assert_allclose(adjoint_estimate(IdentityOperator((2, 2)), y), np.clip(y, 0.0, 1.0))

    def test_sparse_nonzero_count_falls_with_lambda(self):
        op = IdentityOperator((8, 8))
        rng = np.random.default_rng(30)
        y = self.target.copy()
        y.ravel()[rng.choice(64, size=6, replace=False)] += 0.5
        y += 0.01 * rng.standard_normal(y.shape)

        counts = []
        for lam in lambda_grid(1e-3, 10.0, 6):
            spec = SolveSpec(
                operator=op,
                data=y,
                method="sparse",
                lam=lam,
                mu=0.1,
                generator=self.generator,
                init="given",
                z0=self.z0,
                stopping=StoppingRule(max_iter=500),
            )
            counts.append(int(np.count_nonzero(solve(spec).u)))
        self.assertGreater(counts[0], 0)
        self.assertEqual(counts[-1], 0)
        self.assertTrue(all(b <= a for a, b in zip(counts, counts[1:])), counts)

    def test_split_methods_capture_bright_spot(self):
        op = IdentityOperator((8, 8))
        circle = np.zeros((8, 8), dtype=bool)
        circle[2:6, 2:6] = True
        spot = np.zeros((8, 8), dtype=bool)
        spot[3:5, 3:5] = True
        truth = np.zeros((8, 8))
        truth[circle] = 0.5
        truth[spot] = 1.0
        case = SweepCase("spot", truth, op.apply(truth), 0.0, spot=spot, circle=circle)

        rows = {}
        for method in ("hard", "sparse", "sparse-tv"):
            spec = SolveSpec(
                operator=op,
                data=case.data,
                method=method,
                lam=0.02,
                mu=0.1,
                generator=self.generator,
                seed=4,
                stopping=StoppingRule(max_iter=1000),
            )
            rows[method] = sweep_row(case, solve(spec))

        self.assertEqual(rows["hard"]["spot_in_deviation"], 0.0)
        for method in ("sparse", "sparse-tv"):
            with self.subTest(method=method):
                self.assertGreater(rows[method]["spot_capture"], rows["hard"]["spot_capture"])
                self.assertGreaterEqual(rows[method]["spot_capture"], 0.8)
                self.assertGreater(rows[method]["spot_in_deviation"], 0.0)


@override_settings(GENREG_CHECK_DESCENT=True)
class PlantedRecoveryTests(SimpleTestCase):
    """Noiseless in-range data y = A G(z0) through a fixed generator."""

    def setUp(self):
        self.generator, _ = _toy_models()

    def _operators(self):
        return {
            "deconvolution": _blur(),
            "compressed-sensing": gaussian_sensing(40, (8, 8), seed=3),
            "tomography": RadonOperator(8),
        }

    def _hard(self, operator, planted, **kwargs):
        target = self.generator.image(planted)
        spec = SolveSpec(
            operator=operator,
            data=operator.apply(target),
            method="hard",
            lam=1e-8,
            generator=self.generator,
            stopping=StoppingRule(max_iter=3000, tol=1e-12),
            **kwargs,
        )
        return psnr(solve(spec).x, target)

    def _pgd(self, planted, **kwargs):
        target = self.generator.image(planted)
        op = IdentityOperator((8, 8))
        spec = SolveSpec(
            operator=op,
            data=target,
            method="pgd",
            generator=self.generator,
            stopping=StoppingRule(max_iter=20, tol=1e-12),
            inner_iterations=200,
            **kwargs,
        )
        return psnr(solve(spec).x, target)

    def test_hard_recovers_from_nearby_start(self):
        rng = np.random.default_rng(20)
        for name, operator in self._operators().items():
            planted = rng.standard_normal(4)
            start = planted + 0.3 * rng.standard_normal(4)
            with self.subTest(operator=name):
                self.assertGreaterEqual(self._hard(operator, planted, init="given", z0=start), 40.0)

    def test_pgd_identity_recovers_from_nearby_start(self):
        rng = np.random.default_rng(22)
        planted = rng.standard_normal(4)
        start = planted + 0.3 * rng.standard_normal(4)
        self.assertGreaterEqual(self._pgd(planted, init="given", z0=start), 40.0)

    @tag("slow")
    def test_hard_recovers_from_random_restarts(self):
        for name, operator in self._operators().items():
            hits = 0
            for seed in range(10):
                planted = np.random.default_rng([21, seed]).standard_normal(4)
                hits += self._hard(operator, planted, seed=seed, restarts=4) >= 40.0
            with self.subTest(operator=name):
                self.assertGreaterEqual(hits, 8)

    @tag("slow")
    def test_pgd_identity_recovers_from_random_restarts(self):
        hits = 0
        for seed in range(10):
            planted = np.random.default_rng([23, seed]).standard_normal(4)
            hits += self._pgd(planted, seed=seed, restarts=4) >= 40.0
        self.assertGreaterEqual(hits, 8)


class SweepTests(SimpleTestCase):
    def _cases(self, count=2):
        op = _blur()
        rng = np.random.default_rng(0)
        cases = []
        for k in range(count):
            truth = rng.uniform(size=(8, 8))
            cases.append(SweepCase(f"img{k}", truth, op.apply(truth) + 0.01 * rng.standard_normal((8, 8)), 0.08))
        return op, cases

    def test_lambda_grid(self):
        np.testing.assert_allclose(lambda_grid(1e-3, 1.0, 4), [1e-3, 1e-2, 1e-1, 1.0])
        np.testing.assert_array_equal(lambda_grid(0.5, 0.5, 1), [0.5])
        with self.assertRaises(ValueError):
            lambda_grid(0.0, 1.0, 3)

    def test_rows_cover_grid(self):
        op, cases = self._cases()

        def build(case, method, lam, mu):
            return SolveSpec(operator=op, data=case.data, method=method, lam=lam, mu=mu)

        rows, results = sweep(cases, build, ["tikhonov"], [0.01, 0.1, 1.0], mus=[1.0, 2.0])
        self.assertEqual(len(rows), 3 * 2)
        self.assertEqual(len(results), len(rows))
        self.assertEqual({row["morozov"] for row in rows}, {0.08})
        self.assertEqual([row["image"] for row in rows[:2]], ["img0", "img1"])

    def test_tune_picks_grid_point(self):
        op, cases = self._cases()

        def build(case, method, lam, mu):
            return SolveSpec(operator=op, data=case.data, method=method, lam=lam, mu=mu)

        lam, mu, score = tune_parameters(cases, build, "tikhonov", [1e-4, 1e-2, 1e2])
        self.assertIn(lam, [1e-4, 1e-2, 1e2])
        self.assertNotEqual(lam, 1e2)
        self.assertEqual(mu, 1.0)
        self.assertTrue(np.isfinite(score))

    def test_discrepancy_principle_lands_near_noise_level(self):
        op = ConvolutionOperator(gaussian_kernel(5, 1.0), (16, 16))
        rng = np.random.default_rng(5)
        cases = []
        for k in range(2):
            noise = NoiseModel(sigma=0.05, seed=k)
            truth = rng.uniform(size=(16, 16))
            cases.append(SweepCase(f"img{k}", truth, add_noise(op.apply(truth), noise), morozov_target(noise, 256)))

        def build(case, method, lam, mu):
            return SolveSpec(operator=op, data=case.data, method=method, lam=lam, mu=mu)

        rows, _ = sweep(cases, build, ["tikhonov"], lambda_grid(1e-4, 10.0, 16))
        pick = discrepancy_principle(rows, "tikhonov")

        self.assertAlmostEqual(pick["morozov"], 0.8)
        self.assertIn(pick["lam"], {row["lam"] for row in rows})
        self.assertGreaterEqual(pick["discrepancy"] / pick["morozov"], 0.5)
        self.assertLessEqual(pick["discrepancy"] / pick["morozov"], 2.0)

    def test_discrepancy_principle_without_rows(self):
        self.assertIsNone(discrepancy_principle([], "tikhonov"))


class TaskTests(SimpleTestCase):
    def _specs(self):
        rng = np.random.default_rng(1)
        op = IdentityOperator((6, 6))
        return [SolveSpec(operator=op, data=rng.uniform(size=(6, 6)), method="tikhonov", lam=0.5) for _ in range(3)]

    def test_in_process_order(self):
        specs = self._specs()
        results = run_solves(specs, jobs=1)
        for spec, result in zip(specs, results):
            np.testing.assert_allclose(result.x, spec.data / 1.5, rtol=1e-6)

    def test_invalid_jobs(self):
        with self.assertRaises(ValueError):
            run_solves(self._specs(), jobs=0)

    @tag("slow")
    def test_process_pool_matches_in_process(self):
        specs = self._specs()
        serial = run_solves(specs, jobs=1)
        pooled = run_solves(specs, jobs=2)
        for a, b in zip(serial, pooled):
            np.testing.assert_array_equal(a.x, b.x)
