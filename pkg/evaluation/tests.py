import itertools
import math
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from autodiff.layers import LayerSpec
from generative.architectures import Architecture
from generative.networks import build_models
from genreg.storage import read_csv, read_json

from .diagnostics import encode_by_optimization, interpolation_grid, latent_projection_2d, sample_far_from_prior
from .emd import emd
from .metrics import PSNR_CAP, capped, deviation_capture, nrmse, psnr, spot_capture
from .reports import MetricReport, method_summary, nrmse_summary


def _toy_generator(side=6, latent_dim=3, seed=0, with_encoder=False):
    pixels = side * side
    arch = Architecture(
        name="toy",
        kind="ae",
        image_shape=(side, side),
        latent_dim=latent_dim,
        generator=[
            LayerSpec(kind="dense", name="gen.fc", in_features=latent_dim, out_features=pixels),
            LayerSpec(kind="sigmoid"),
            LayerSpec(kind="reshape", shape=(side, side)),
        ],
        encoder=[LayerSpec(kind="reshape", shape=(pixels,))],
        encoder_heads=[LayerSpec(kind="dense", name="enc.z", in_features=pixels, out_features=latent_dim)],
    )
    generator, encoder, _ = build_models(arch, seed=seed)
    return (generator, encoder) if with_encoder else generator


class MetricTests(SimpleTestCase):
    def test_psnr_uniform_error(self):
        ref = np.random.default_rng(0).uniform(size=(8, 8))
        self.assertAlmostEqual(psnr(ref + 0.1, ref), 20.0, places=10)

    def test_identical_images(self):
        ref = np.ones((3, 3))
        self.assertEqual(psnr(ref, ref), math.inf)
        self.assertEqual(capped(psnr(ref, ref)), PSNR_CAP)

    def test_psnr_permutation_invariant(self):
        rng = np.random.default_rng(1)
        x, ref = rng.uniform(size=16), rng.uniform(size=16)
        perm = rng.permutation(16)
        self.assertAlmostEqual(psnr(x, ref), psnr(x[perm], ref[perm]), places=12)

    def test_psnr_decreases_with_nrmse(self):
        rng = np.random.default_rng(2)
        ref = rng.uniform(size=(6, 6))
        noise = rng.standard_normal((6, 6))
        pairs = [(nrmse(ref + s * noise, ref), psnr(ref + s * noise, ref)) for s in (0.01, 0.05, 0.1, 0.5)]
        for (n1, p1), (n2, p2) in zip(pairs, pairs[1:]):
            self.assertLess(n1, n2)
            self.assertGreater(p1, p2)

    def test_nrmse_values(self):
        ref = np.random.default_rng(3).uniform(size=(5, 5))
        self.assertEqual(nrmse(ref, ref), 0.0)
        self.assertAlmostEqual(nrmse(2 * ref, ref), 1.0, places=12)
        self.assertAlmostEqual(nrmse(np.zeros_like(ref), ref), 1.0, places=12)

    def test_errors(self):
        with self.assertRaises(ValueError):
            nrmse(np.ones(3), np.zeros(3))
        with self.assertRaises(ValueError):
            psnr(np.ones(3), np.ones(4))


class SpotCaptureTests(SimpleTestCase):
    def setUp(self):
        self.circle = np.zeros((8, 8), dtype=bool)
        self.circle[2:6, 2:6] = True
        self.spot = np.zeros((8, 8), dtype=bool)
        self.spot[3:5, 3:5] = True
        self.truth = np.where(self.circle, 0.5, 0.0)
        self.truth[self.spot] = 1.0

    def test_perfect_and_flattened_spot(self):
        self.assertAlmostEqual(spot_capture(self.truth, self.truth, self.spot, self.circle), 1.0)
        flat = np.where(self.circle, 0.5, 0.0)
        self.assertAlmostEqual(spot_capture(flat, self.truth, self.spot, self.circle), 0.0)

    def test_deviation_share(self):
        u = np.zeros((8, 8))
        self.assertEqual(deviation_capture(u, self.truth, self.spot, self.circle), 0.0)
        u[self.spot] = 0.25
        self.assertAlmostEqual(deviation_capture(u, self.truth, self.spot, self.circle), 0.5)

    def test_invalid_masks(self):
        with self.assertRaises(ValueError):
            spot_capture(self.truth, self.truth, np.zeros((8, 8), dtype=bool), self.circle)
        with self.assertRaises(ValueError):
            spot_capture(self.truth, self.truth, self.spot, self.spot)
        with self.assertRaises(ValueError):
            spot_capture(self.truth, self.truth, self.spot[:4], self.circle)
        with self.assertRaises(ValueError):
            spot_capture(self.truth, np.where(self.circle, 0.5, 0.0), self.spot, self.circle)


class EMDTests(SimpleTestCase):
    def test_same_multiset_is_zero(self):
        rng = np.random.default_rng(0)
        a = rng.uniform(size=(6, 4, 4))
        self.assertEqual(emd(a, a[rng.permutation(6)]), 0.0)

    def test_single_pair(self):
        a, b = np.zeros((1, 2, 2)), np.ones((1, 2, 2))
        self.assertEqual(emd(a, b), 4.0)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(1)
        for trial in range(50):
            n = int(rng.integers(1, 9))
            a = rng.uniform(size=(n, 3, 3))
            b = rng.uniform(size=(n, 3, 3))
            cost = ((a.reshape(n, 1, -1) - b.reshape(1, n, -1)) ** 2).sum(axis=2)
            best = min(cost[np.arange(n), list(p)].mean() for p in itertools.permutations(range(n)))
            with self.subTest(trial=trial, n=n):
                self.assertAlmostEqual(emd(a, b), best, places=10)

    def test_symmetric_and_nonnegative(self):
        rng = np.random.default_rng(2)
        a, b = rng.uniform(size=(7, 4, 4)), rng.uniform(size=(7, 4, 4))
        self.assertAlmostEqual(emd(a, b), emd(b, a), places=12)
        self.assertGreater(emd(a, b), 0.0)

    def test_size_mismatch(self):
        with self.assertRaises(ValueError):
            emd(np.zeros((3, 2, 2)), np.zeros((4, 2, 2)))


class EncodingTests(SimpleTestCase):
    def test_in_range_image_from_its_latent(self):
        generator = _toy_generator()
        z0 = np.random.default_rng(0).standard_normal(3)
        result = encode_by_optimization(generator.image(z0), generator, z0=z0)
        np.testing.assert_array_equal(result.z, z0)
        self.assertEqual(result.nrmse, 0.0)

    def test_descends_from_initialisation(self):
        generator = _toy_generator()
        target = np.random.default_rng(1).uniform(size=(6, 6))
        result = encode_by_optimization(target, generator, restarts=3, seed=4)
        self.assertLessEqual(result.nrmse, result.initial_nrmse)
        self.assertEqual(len(result.restart_nrmse), 3)

    def test_encoder_start(self):
        generator, encoder = _toy_generator(with_encoder=True)
        target = np.random.default_rng(2).uniform(size=(6, 6))
        result = encode_by_optimization(target, generator, encoder=encoder)
        self.assertEqual(result.restart, 0)
        self.assertLessEqual(result.nrmse, nrmse(generator.image(encoder.encode(target)), target))

    def test_deterministic(self):
        generator = _toy_generator()
        target = np.random.default_rng(3).uniform(size=(6, 6))
        a = encode_by_optimization(target, generator, seed=7)
        b = encode_by_optimization(target, generator, seed=7)
        np.testing.assert_array_equal(a.z, b.z)


class ProjectionTests(SimpleTestCase):
    def test_identity_override(self):
        pts = np.random.default_rng(0).standard_normal((5, 2))
        out, ref, _ = latent_projection_2d(pts, pts, projection=np.eye(2))
        np.testing.assert_array_equal(out, pts)
        np.testing.assert_array_equal(ref, pts)

    def test_projected_variance(self):
        rng = np.random.default_rng(1)
        samples = rng.standard_normal((10_000, 8))
        projected, _, matrix = latent_projection_2d(samples, samples[:10], seed=3)
        expected = (matrix ** 2).sum(axis=0)
        observed = projected.var(axis=0)
        np.testing.assert_array_less(np.abs(observed - expected), 0.15 * expected)

    def test_seeded(self):
        pts = np.ones((2, 4))
        _, _, m1 = latent_projection_2d(pts, pts, seed=5)
        _, _, m2 = latent_projection_2d(pts, pts, seed=5)
        np.testing.assert_array_equal(m1, m2)

    def test_dimension_mismatch(self):
        with self.assertRaises(ValueError):
            latent_projection_2d(np.zeros((2, 3)), np.zeros((2, 4)))


class InterpolationTests(SimpleTestCase):
    def test_corners(self):
        generator = _toy_generator()
        z1, z2, z3 = np.random.default_rng(0).standard_normal((3, 3))
        grid = interpolation_grid(generator, z1, z2, z3)
        self.assertEqual(grid.shape, (5, 5, 6, 6))
        corners = generator.images(np.stack([z1, z2, z3]))
        np.testing.assert_allclose(grid[0, 0], corners[0], atol=1e-12)
        np.testing.assert_allclose(grid[-1, 0], corners[1], atol=1e-12)
        np.testing.assert_allclose(grid[0, -1], corners[2], atol=1e-12)

    def test_equal_latents_give_constant_grid(self):
        generator = _toy_generator()
        z = np.random.default_rng(1).standard_normal(3)
        grid = interpolation_grid(generator, z, z, z)
        np.testing.assert_allclose(grid, np.broadcast_to(grid[0, 0], grid.shape), atol=1e-12)


class FarFromPriorTests(SimpleTestCase):
    def test_radius(self):
        latents, images = sample_far_from_prior(_toy_generator(), 7.5, 20, seed=1)
        self.assertAlmostEqual(float(np.linalg.norm(latents, axis=1).mean()), 7.5, delta=1e-9)
        self.assertEqual(images.shape, (20, 6, 6))

    def test_small_radius_approaches_origin_image(self):
        generator = _toy_generator()
        _, images = sample_far_from_prior(generator, 1e-8, 3, seed=2)
        np.testing.assert_allclose(images, np.broadcast_to(generator.image(np.zeros(3)), images.shape), atol=1e-7)

    def test_seeded(self):
        generator = _toy_generator()
        np.testing.assert_array_equal(
            sample_far_from_prior(generator, 2.0, 4, seed=3)[0], sample_far_from_prior(generator, 2.0, 4, seed=3)[0]
        )

    def test_invalid_radius(self):
        with self.assertRaises(ValueError):
            sample_far_from_prior(_toy_generator(), 0.0, 3)


class ReportTests(SimpleTestCase):
    def _report(self):
        report = MetricReport(provenance={"model": "toy", "dataset": "shapes", "seed": 0})
        for k, value in enumerate([0.1, 0.3, 0.2, 0.5]):
            report.add(f"img{k}", "nrmse", value)
            report.add(f"img{k}", "psnr", 20.0 + k)
        return report

    def test_aggregates_match_records(self):
        report = self._report()
        stats = report.aggregates("nrmse")
        self.assertAlmostEqual(stats["mean"], np.mean([0.1, 0.3, 0.2, 0.5]), delta=1e-12)
        self.assertAlmostEqual(stats["median"], 0.25, delta=1e-12)
        self.assertEqual(stats["count"], 4)

    def test_write_round_trip(self):
        report = self._report()
        with tempfile.TemporaryDirectory() as tmp:
            csv_path, json_path = report.write(tmp, "toy")
            rows = read_csv(csv_path)
            manifest = read_json(json_path)
            self.assertEqual(len(rows), 8)
            recomputed = np.mean([float(r["value"]) for r in rows if r["metric"] == "psnr"])
            self.assertAlmostEqual(manifest["aggregates"]["psnr"]["mean"], recomputed, delta=1e-12)
            self.assertEqual(manifest["provenance"]["model"], "toy")
            self.assertTrue(Path(json_path).exists())

    def test_unknown_metric(self):
        with self.assertRaises(ValueError):
            self._report().aggregates("ssim")

    def test_nrmse_summary(self):
        rows = nrmse_summary({"ae": self._report(), "gan": self._report()})
        self.assertEqual([r["model"] for r in rows], ["ae", "gan"])
        self.assertIn("q3", rows[0])

    def test_method_summary(self):
        rows = [
            {"method": "hard", "lam": 0.1, "mu": 1.0, "psnr": 20.0},
            {"method": "hard", "lam": 0.1, "mu": 1.0, "psnr": 22.0},
            {"method": "tv", "lam": 0.1, "mu": 1.0, "psnr": 25.0},
        ]
        summary = method_summary(rows)
        self.assertEqual(len(summary), 2)
        self.assertEqual(summary[0]["psnr_mean"], 21.0)
        self.assertEqual(summary[0]["psnr_std"], 1.0)
