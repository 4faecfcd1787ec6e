import gzip
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from pydantic import ValidationError

from .cache import dataset_checksum, load_dataset, save_dataset
from .mnist import load_mnist, parse_idx_images
from .shapes import ShapesConfig, generate_shapes, iterate_batches, train_test_split


def _idx_bytes(images: np.ndarray, magic: int = 0x00000803) -> bytes:
    count, rows, cols = images.shape
    header = np.array([magic, count, rows, cols], dtype=">u4").tobytes()
    return header + images.astype(np.uint8).tobytes()


class ShapesTests(SimpleTestCase):
    def test_count_zero_rejected(self):
        with self.assertRaises(ValidationError):
            ShapesConfig(count=0)

    def test_small_image_size_rejected(self):
        with self.assertRaises(ValidationError):
            ShapesConfig(image_size=8)

    def test_exactly_three_intensities(self):
        dataset = generate_shapes(ShapesConfig(count=25, seed=3))
        self.assertEqual(len(dataset), 25)
        for image in dataset.images:
            self.assertEqual(len(np.unique(image)), 3)
            self.assertEqual(image.min(), 0.0)

    def test_shapes_do_not_overlap_and_are_constant(self):
        dataset = generate_shapes(ShapesConfig(count=40, seed=11))
        for image, circle, rect in zip(dataset.images, dataset.masks["circle"], dataset.masks["rectangle"]):
            self.assertFalse(np.any(circle & rect))
            self.assertTrue(circle.any() and rect.any())
            self.assertEqual(len(np.unique(image[circle])), 1)
            self.assertEqual(len(np.unique(image[rect])), 1)
            self.assertTrue(np.all(image[~(circle | rect)] == 0.0))

    def test_bounded_pixels(self):
        dataset = generate_shapes(ShapesConfig(count=30, seed=5, bright_spot=True))
        self.assertGreaterEqual(dataset.images.min(), 0.0)
        self.assertLessEqual(dataset.images.max(), 1.0)

    def test_seeded_reproducibility(self):
        a = generate_shapes(ShapesConfig(count=10, seed=7))
        b = generate_shapes(ShapesConfig(count=10, seed=7))
        c = generate_shapes(ShapesConfig(count=10, seed=8))
        np.testing.assert_array_equal(a.images, b.images)
        self.assertFalse(np.array_equal(a.images[0], c.images[0]))

    def test_splits_differ(self):
        train = generate_shapes(ShapesConfig(count=3, seed=1, split="train"))
        test = generate_shapes(ShapesConfig(count=3, seed=1, split="test"))
        self.assertFalse(np.array_equal(train.images[0], test.images[0]))

    def test_bright_spot_lies_inside_circle(self):
        dataset = generate_shapes(ShapesConfig(count=30, seed=2, bright_spot=True))
        self.assertEqual(dataset.provenance, "shapes+")
        for image, circle, spot in zip(dataset.images, dataset.masks["circle"], dataset.masks["spot"]):
            self.assertTrue(spot.any())
            self.assertTrue(np.all(circle[spot]))
            self.assertTrue(np.all(image[spot] == 1.0))

    def test_infeasible_geometry_rejected(self):
        config = ShapesConfig(image_size=16, count=1, min_radius=7.0, max_radius=7.5, min_side=8, max_side=8, max_attempts=20)
        with self.assertRaisesMessage(ValueError, "infeasible"):
            generate_shapes(config)

    def test_batches_cover_dataset(self):
        dataset = generate_shapes(ShapesConfig(count=10, seed=0))
        batches = list(iterate_batches(dataset, 4, np.random.default_rng(0)))
        self.assertEqual([len(b) for b in batches], [4, 4, 2])
        total = np.sort(np.concatenate(batches).sum(axis=(1, 2)))
        np.testing.assert_allclose(total, np.sort(dataset.images.sum(axis=(1, 2))))

    def test_split_without_rng_holds_out_the_tail(self):
        dataset = generate_shapes(ShapesConfig(count=10, seed=0, bright_spot=True))
        kept, held = train_test_split(dataset, 3, names=("train", "tune"))
        np.testing.assert_array_equal(kept.images, dataset.images[:7])
        np.testing.assert_array_equal(held.images, dataset.images[7:])
        np.testing.assert_array_equal(held.masks["spot"], dataset.masks["spot"][7:])
        self.assertEqual((kept.split, held.split), ("train", "tune"))
        self.assertEqual(held.provenance, "shapes+")

    def test_seeded_split_is_a_partition(self):
        dataset = generate_shapes(ShapesConfig(count=10, seed=0))
        first = train_test_split(dataset, 4, rng=np.random.default_rng(7))
        again = train_test_split(dataset, 4, rng=np.random.default_rng(7))
        for a, b in zip(first, again):
            np.testing.assert_array_equal(a.images, b.images)
        self.assertEqual([len(part) for part in first], [6, 4])
        merged = np.sort(np.concatenate([part.images for part in first]).sum(axis=(1, 2)))
        np.testing.assert_allclose(merged, np.sort(dataset.images.sum(axis=(1, 2))))

    def test_split_count_bounds(self):
        dataset = generate_shapes(ShapesConfig(count=5, seed=0))
        for count in (0, 5):
            with self.assertRaises(ValueError):
                train_test_split(dataset, count)


class MnistTests(SimpleTestCase):
    def test_all_zero_payload(self):
        images = parse_idx_images(_idx_bytes(np.zeros((3, 28, 28))))
        self.assertEqual(images.shape, (3, 28, 28))
        self.assertEqual(images.max(), 0.0)

    def test_bad_magic_names_file(self):
        with self.assertRaisesMessage(ValueError, "train-images"):
            parse_idx_images(_idx_bytes(np.zeros((1, 2, 2)), magic=0x801), source="train-images-idx3-ubyte")

    def test_truncated_file_rejected(self):
        payload = _idx_bytes(np.zeros((2, 4, 4)))[:-5]
        with self.assertRaisesMessage(ValueError, "truncated"):
            parse_idx_images(payload, source="t10k")

    def test_load_scales_and_counts(self):
        rng = np.random.default_rng(0)
        raw = rng.integers(0, 256, size=(5, 28, 28))
        with tempfile.TemporaryDirectory() as tmp:
            with gzip.open(Path(tmp) / "t10k-images-idx3-ubyte.gz", "wb") as fh:
                fh.write(_idx_bytes(raw))
            first = load_mnist(tmp, split="test")
            second = load_mnist(tmp, split="test", limit=2)

        self.assertEqual(len(first), 5)
        self.assertEqual(len(second), 2)
        np.testing.assert_allclose(first.images, raw / 255.0)
        self.assertEqual(first.images[0].tobytes(), second.images[0].tobytes())


class CacheTests(SimpleTestCase):
    def test_round_trip(self):
        dataset = generate_shapes(ShapesConfig(count=6, seed=4, bright_spot=True))
        with tempfile.TemporaryDirectory() as tmp:
            save_dataset(dataset, tmp)
            loaded = load_dataset(tmp, "train")

        self.assertEqual(dataset_checksum(loaded), dataset_checksum(dataset))
        self.assertEqual(loaded.provenance, "shapes+")
        np.testing.assert_array_equal(loaded.masks["spot"], dataset.masks["spot"])
