import json
import math
import tempfile
from io import StringIO
from pathlib import Path
from unittest import mock

import numpy as np
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, override_settings, tag

from generative.store import load_models, save_models
from genreg.exceptions import ConfigError, NumericalAbort
from genreg.storage import read_csv, read_json

from .config import DatasetSection, ExperimentConfig, load_config
from .pipelines import load_split, train_models

SMALL = {
    "name": "smoke",
    "dataset": {"kind": "shapes", "image_size": 16, "train_count": 12, "test_count": 6, "tune_count": 3},
    "model": {"kind": "ae", "latent_dim": 3, "train": {"epochs": 2, "batch_size": 6}},
    "evaluation": {
        "test_images": 3,
        "emd_count": 6,
        "projection_count": 20,
        "max_iter": 20,
        "far_radii": [4.0],
        "far_count": 2,
        "histogram_bins": 4,
    },
    "solver": {
        "problem": {"kind": "deconvolution", "kernel_size": 3, "sigma": 0.1},
        "methods": ["tikhonov", "tv"],
        "lams": [0.01, 0.1],
        "images": 2,
        "max_iter": 30,
    },
}


def _merged(base, overrides):
    out = json.loads(json.dumps(base))
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merged(out[key], value)
        else:
            out[key] = value
    return out


class _CommandCase(SimpleTestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def write_config(self, values, name="experiment.json") -> str:
        path = self.tmp / name
        path.write_text(json.dumps(values), encoding="utf-8")
        return str(path)

    def run_command(self, name, **options):
        out = StringIO()
        call_command(name, stdout=out, stderr=StringIO(), **options)
        return out.getvalue()

    def assertExitCode(self, code, name, **options):
        with self.assertRaises(CommandError) as ctx:
            self.run_command(name, **options)
        self.assertEqual(ctx.exception.returncode, code)


class ConfigTests(_CommandCase):
    def test_defaults(self):
        config = load_config()
        self.assertEqual(config.dataset.kind, "shapes")
        self.assertEqual(config.solver.mus, [1.0])

    def test_unknown_keys_rejected(self):
        for values in ({"colour": "red"}, {"solver": {"lambda": 0.1}}, {"model": {"train": {"optimiser": "sgd"}}}):
            with self.subTest(values=values), self.assertRaises(ConfigError):
                load_config(self.write_config(values))

    def test_unreadable_files(self):
        with self.assertRaises(ConfigError):
            load_config(self.tmp / "missing.json")
        bad = self.tmp / "bad.json"
        bad.write_text("{not json", encoding="utf-8")
        with self.assertRaises(ConfigError):
            load_config(bad)
        with self.assertRaises(ConfigError):
            load_config(self.write_config([1, 2]))

    def test_flag_beats_file_beats_settings(self):
        with override_settings(GENREG_JOBS=3, GENREG_OUT=self.tmp / "env", GENREG_DEFAULT_SEED=11):
            from_settings = ExperimentConfig().resolved()
            self.assertEqual((from_settings.seed, from_settings.jobs), (11, 3))
            self.assertEqual(from_settings.output_dir, self.tmp / "env")

            from_file = ExperimentConfig(seed=5, jobs=2, output="file-out").resolved()
            self.assertEqual((from_file.seed, from_file.jobs, from_file.output), (5, 2, "file-out"))

            from_flags = ExperimentConfig(seed=5, jobs=2).resolved(seed=9, jobs=1, out="flag-out")
            self.assertEqual((from_flags.seed, from_flags.jobs, from_flags.output), (9, 1, "flag-out"))

    def test_bad_jobs_flag(self):
        with self.assertRaises(ConfigError):
            ExperimentConfig().resolved(jobs=0)

    def test_echo_reproduces_config(self):
        config = load_config(self.write_config(SMALL)).resolved(seed=4, out=str(self.tmp))
        path = config.echo(self.tmp)
        self.assertEqual(load_config(path), config)

    def test_updated_revalidates(self):
        config = ExperimentConfig()
        self.assertEqual(config.updated("dataset", kind="mnist").dataset.kind, "mnist")
        with self.assertRaises(ConfigError):
            config.updated("dataset", kind="cifar")

    def test_given_init_rejected(self):
        with self.assertRaises(ConfigError):
            load_config(self.write_config({"solver": {"init": "given"}}))

    def test_split_counts_default_per_kind(self):
        mnist = DatasetSection(kind="mnist")
        self.assertEqual((mnist.count("train"), mnist.count("test")), (10000, 1000))
        shapes = DatasetSection()
        self.assertEqual((shapes.count("train"), shapes.count("test"), shapes.count("tune")), (4000, 500, 20))
        explicit = DatasetSection(kind="mnist", train_count=50, test_count=5)
        self.assertEqual((explicit.count("train"), explicit.count("test")), (50, 5))

    def test_spot_kept_out_of_training_unless_asked(self):
        section = DatasetSection(kind="shapes-plus")
        self.assertEqual([section.bright_spot(split) for split in ("train", "test", "tune")], [False, True, True])
        self.assertTrue(DatasetSection(kind="shapes-plus", spot_in_train=True).bright_spot("train"))
        self.assertFalse(DatasetSection().bright_spot("test"))

    def test_zero_lambda_only_for_pgd(self):
        with self.assertRaises(ConfigError):
            load_config(self.write_config({"solver": {"methods": ["tikhonov"], "lams": [0.0, 0.1]}}))
        with self.assertRaises(ConfigError):
            load_config(self.write_config({"solver": {"methods": ["pgd", "sparse"], "lams": [0.0]}}))
        config = load_config(self.write_config({"solver": {"methods": ["pgd"], "lams": [0.0, 0.1]}}))
        self.assertEqual(config.solver.lams, [0.0, 0.1])


class DataCommandTests(_CommandCase):
    def _run_dir(self, kind="shapes", seed=7):
        return self.tmp / f"experiment-{kind}-data-seed{seed}"

    def test_writes_requested_images(self):
        self.run_command("data", kind="shapes", n=100, seed=7, out=str(self.tmp), split=["train"])
        manifest = read_json(self._run_dir() / "train.json")
        self.assertEqual(manifest["count"], 100)
        self.assertFalse(manifest["bright_spot"])
        self.assertTrue((self._run_dir() / "train.grg").exists())
        self.assertTrue((self._run_dir() / "train-preview.pgm").exists())
        self.assertEqual(read_json(self._run_dir() / "config.json")["seed"], 7)

    def test_rerun_gives_identical_files(self):
        options = dict(kind="shapes", n=20, seed=7, out=str(self.tmp), split=["test"])
        self.run_command("data", **options)
        first = (self._run_dir() / "test.grg").read_bytes()
        self.run_command("data", **options)
        self.assertEqual((self._run_dir() / "test.grg").read_bytes(), first)

    def test_shapes_plus_spot_stays_out_of_training(self):
        self.run_command("data", kind="shapes-plus", n=5, seed=1, out=str(self.tmp), split=["train", "test"])
        run_dir = self._run_dir("shapes-plus", 1)
        test = read_json(run_dir / "test.json")
        self.assertTrue(test["bright_spot"])
        self.assertEqual(test["provenance"], "shapes+")
        self.assertFalse(read_json(run_dir / "train.json")["bright_spot"])

    def test_all_splits_by_default(self):
        config = self.write_config(SMALL)
        self.run_command("data", config=config, seed=0, out=str(self.tmp))
        run_dir = self.tmp / "smoke-shapes-data-seed0"
        counts = {split: read_json(run_dir / f"{split}.json")["count"] for split in ("train", "test", "tune")}
        self.assertEqual(counts, {"train": 12, "test": 6, "tune": 3})

    def test_config_errors_exit_1(self):
        self.assertExitCode(1, "data", config=str(self.tmp / "missing.json"), out=str(self.tmp))
        self.assertExitCode(1, "data", config=self.write_config({"datset": {}}), out=str(self.tmp))
        self.assertExitCode(1, "data", n=0, out=str(self.tmp))
        self.assertExitCode(1, "data", image_size=8, out=str(self.tmp))


class TrainCommandTests(_CommandCase):
    def test_smoke_run(self):
        output = self.run_command("train", config=self.write_config(SMALL), seed=3, out=str(self.tmp))
        run_dir = self.tmp / "smoke-ae-seed3"
        self.assertIn(str(run_dir), output)

        rows = read_csv(run_dir / "losses.csv")
        self.assertEqual([int(r["epoch"]) for r in rows], [1, 2])
        trained = load_models(run_dir / "model")
        self.assertEqual(trained.architecture.latent_dim, 3)
        self.assertTrue((run_dir / "samples.pgm").exists())

    def test_reload_generates_identical_image(self):
        config = load_config(self.write_config(SMALL)).resolved(seed=0, out=str(self.tmp))
        trained = train_models(config)
        before = trained.generator.image(np.zeros(3))
        save_models(trained, self.tmp / "model")
        after = load_models(self.tmp / "model").generator.image(np.zeros(3))
        np.testing.assert_array_equal(before, after)

    def test_training_is_deterministic(self):
        config = load_config(self.write_config(SMALL)).resolved(seed=2, out=str(self.tmp))
        a, b = train_models(config), train_models(config)
        self.assertEqual(a.history, b.history)
        z = np.ones(3)
        np.testing.assert_array_equal(a.generator.image(z), b.generator.image(z))

    def test_numerical_abort_exits_2(self):
        with mock.patch(
            "main.management.commands.train.train_pipeline", side_effect=NumericalAbort("ae loss became nan at epoch 1, batch 0")
        ):
            self.assertExitCode(2, "train", config=self.write_config(SMALL), out=str(self.tmp))

    def test_kind_flag(self):
        with mock.patch("main.management.commands.train.train_pipeline", return_value=self.tmp) as pipeline:
            self.run_command("train", kind="vae", epochs=0, out=str(self.tmp))
        config = pipeline.call_args[0][0]
        self.assertEqual(config.model.kind, "vae")
        self.assertEqual(config.model.train.epochs, 0)


class ReconstructCommandTests(_CommandCase):
    def test_classical_grid(self):
        self.run_command("reconstruct", config=self.write_config(SMALL), seed=0, out=str(self.tmp))
        run_dir = self.tmp / "smoke-deconvolution-reconstruct-seed0"

        rows = read_csv(run_dir / "solves.csv")
        self.assertEqual(len(rows), 2 * 2 * 1 * 2)
        keys = {(r["method"], r["lam"], r["mu"], r["image"], r["seed"]) for r in rows}
        self.assertEqual(len(keys), len(rows))

        # sigma * sqrt(m) with m = 16 * 16 data entries
        self.assertEqual({float(r["morozov"]) for r in rows}, {0.1 * 16})
        discrepancy = read_csv(run_dir / "discrepancy.csv")
        self.assertEqual({float(r["morozov"]) for r in discrepancy}, {1.6})

        summary = read_csv(run_dir / "summary.csv")
        self.assertEqual(len(summary), 4)
        for entry in summary:
            values = [float(r["psnr"]) for r in rows if (r["method"], r["lam"]) == (entry["method"], entry["lam"])]
            self.assertAlmostEqual(float(entry["psnr_mean"]), float(np.mean(values)), delta=1e-12)

        traces = read_csv(run_dir / "traces.csv")
        self.assertEqual({int(r["solve"]) for r in traces}, set(range(len(rows))))
        self.assertTrue((run_dir / "reconstructions.grg").exists())
        self.assertTrue((run_dir / "previews" / "solve0000-tikhonov.pgm").exists())
        self.assertIsNone(read_json(run_dir / "reconstruct.json")["model"])

        self.assertNotIn("wall_ms", rows[0])
        timings = read_csv(run_dir / "timings.csv")
        self.assertEqual([int(r["solve"]) for r in timings], list(range(len(rows))))
        choice = read_csv(run_dir / "morozov_choice.csv")
        self.assertEqual([r["method"] for r in choice], ["tikhonov", "tv"])
        for entry in choice:
            self.assertIn(entry["lam"], {r["lam"] for r in rows})

        first = (run_dir / "solves.csv").read_bytes()
        self.run_command("reconstruct", config=self.write_config(SMALL), seed=0, out=str(self.tmp))
        self.assertEqual((run_dir / "solves.csv").read_bytes(), first)

    def test_tuning_picks_one_point_per_method(self):
        values = _merged(SMALL, {"solver": {"methods": ["tikhonov"], "lams": [0.01, 0.1, 1.0], "tune": True}})
        self.run_command("reconstruct", config=self.write_config(values), seed=0, out=str(self.tmp))
        run_dir = self.tmp / "smoke-deconvolution-reconstruct-seed0"
        chosen = read_csv(run_dir / "tuning.csv")
        self.assertEqual(len(chosen), 1)
        rows = read_csv(run_dir / "solves.csv")
        self.assertEqual(len(rows), 2)
        self.assertEqual({r["lam"] for r in rows}, {chosen[0]["lam"]})

    def test_invalid_solve_exits_1(self):
        values = _merged(SMALL, {"solver": {"methods": ["tikhonov"], "lams": [0.0]}})
        self.assertExitCode(1, "reconstruct", config=self.write_config(values), out=str(self.tmp))

    def test_numerical_abort_exits_2(self):
        with mock.patch("main.pipelines.sweep", side_effect=NumericalAbort("hard: Lipschitz estimate overflow")):
            self.assertExitCode(2, "reconstruct", config=self.write_config(SMALL), out=str(self.tmp))

    def test_missing_checkpoint_exits_1(self):
        values = _merged(SMALL, {"solver": {"methods": ["hard"]}})
        self.assertExitCode(
            1, "reconstruct", config=self.write_config(values), checkpoint=str(self.tmp / "nowhere"), out=str(self.tmp)
        )

    @tag("slow")
    def test_relaxed_fits_data_closer_than_hard_at_small_lambda(self):
        values = _merged(
            SMALL,
            {
                "solver": {
                    "methods": ["hard", "relaxed"],
                    "lams": [1e-4, 1e-2],
                    "images": 1,
                    "max_iter": 300,
                    "previews": False,
                }
            },
        )
        self.run_command("reconstruct", config=self.write_config(values), seed=0, out=str(self.tmp))
        rows = read_csv(self.tmp / "smoke-deconvolution-reconstruct-seed0" / "solves.csv")
        smallest = {r["method"]: float(r["discrepancy"]) for r in rows if math.isclose(float(r["lam"]), 1e-4)}
        self.assertLess(smallest["relaxed"], smallest["hard"])


@tag("slow")
class EvaluateCommandTests(_CommandCase):
    def test_full_suite(self):
        config = self.write_config(SMALL)
        self.run_command("evaluate", config=config, seed=0, out=str(self.tmp))
        run_dir = self.tmp / "smoke-ae-evaluate-seed0"

        for name in (
            "reconstruction.csv",
            "reconstruction.json",
            "nrmse_histogram.csv",
            "projection.csv",
            "interpolation.pgm",
            "far_r4.pgm",
            "far_from_prior.csv",
            "nrmse_summary.csv",
            "evaluate.json",
            "config.json",
            "model/model.grg",
        ):
            with self.subTest(name=name):
                self.assertTrue((run_dir / name).exists())

        rows = read_csv(run_dir / "reconstruction.csv")
        nrmse = [float(r["value"]) for r in rows if r["metric"] == "nrmse"]
        self.assertEqual(len(nrmse), 3)
        manifest = read_json(run_dir / "reconstruction.json")
        self.assertAlmostEqual(manifest["aggregates"]["nrmse"]["mean"], float(np.mean(nrmse)), delta=1e-12)
        self.assertGreaterEqual(read_json(run_dir / "evaluate.json")["emd"], 0.0)

        histogram = read_csv(run_dir / "nrmse_histogram.csv")
        self.assertEqual(sum(int(r["count"]) for r in histogram), 3)

        (summary,) = read_csv(run_dir / "nrmse_summary.csv")
        self.assertEqual(summary["model"], "ae")
        self.assertAlmostEqual(float(summary["median"]), float(np.median(nrmse)), delta=1e-12)

        first = {name: (run_dir / name).read_bytes() for name in ("reconstruction.csv", "evaluate.json", "projection.csv")}
        self.run_command("evaluate", config=config, seed=0, out=str(self.tmp))
        for name, payload in first.items():
            with self.subTest(rerun=name):
                self.assertEqual((run_dir / name).read_bytes(), payload)

    def test_gan_reconstructs_worse_than_autoencoders(self):
        values = _merged(
            SMALL,
            {
                "dataset": {"train_count": 400, "test_count": 40},
                "model": {"latent_dim": 8, "train": {"epochs": 15, "batch_size": 32}},
                "evaluation": {"test_images": 20, "max_iter": 200, "emd_count": 20},
            },
        )
        agreeing = 0
        for seed in range(3):
            medians = {}
            for kind in ("ae", "vae", "gan"):
                config = self.write_config(_merged(values, {"model": {"kind": kind}}), name=f"{kind}.json")
                self.run_command("evaluate", config=config, seed=seed, out=str(self.tmp))
                (summary,) = read_csv(self.tmp / f"smoke-{kind}-evaluate-seed{seed}" / "nrmse_summary.csv")
                medians[kind] = float(summary["median"])
            close = abs(medians["ae"] - medians["vae"]) <= 0.2 * max(medians["ae"], medians["vae"])
            agreeing += close and medians["gan"] >= 1.3 * medians["vae"]
        self.assertGreaterEqual(agreeing, 2)

    def test_saved_checkpoint(self):
        config = self.write_config(SMALL)
        self.run_command("train", config=config, seed=0, out=str(self.tmp))
        checkpoint = self.tmp / "smoke-ae-seed0" / "model"
        self.run_command("evaluate", config=config, seed=0, out=str(self.tmp), checkpoint=str(checkpoint))
        run_dir = self.tmp / "smoke-ae-evaluate-seed0"
        self.assertFalse((run_dir / "model").exists())

    def test_kind_mismatch_exits_1(self):
        config = self.write_config(SMALL)
        self.run_command("train", config=config, seed=0, out=str(self.tmp))
        checkpoint = self.tmp / "smoke-ae-seed0" / "model"
        gan = self.write_config(_merged(SMALL, {"model": {"kind": "gan"}}), name="gan.json")
        self.assertExitCode(1, "evaluate", config=gan, out=str(self.tmp), checkpoint=str(checkpoint))


class SplitTests(SimpleTestCase):
    def test_prefix_does_not_depend_on_split_size(self):
        section = ExperimentConfig.model_validate(SMALL).dataset
        small = load_split(section, "test", seed=0, count=2)
        full = load_split(section, "test", seed=0)
        np.testing.assert_array_equal(small.images, full.images[:2])

    def test_unknown_split(self):
        with self.assertRaises(ValueError):
            load_split(ExperimentConfig().dataset, "validation", seed=0)
