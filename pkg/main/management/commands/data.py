from genreg.exceptions import ConfigError
from main.management.base import ExperimentCommand
from main.pipelines import SPLITS, data_pipeline


class Command(ExperimentCommand):
    help = "Synthesise Shapes / Shapes+ or read MNIST, and cache the splits with a manifest"

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--kind", choices=["shapes", "shapes-plus", "mnist"], default=None)
        parser.add_argument("--n", type=int, default=None, help="images per written split")
        parser.add_argument("--image-size", type=int, default=None)
        parser.add_argument("--split", action="append", choices=SPLITS, default=None, help="repeatable; all splits by default")

    def customize(self, config, options):
        updates = {}
        if options["kind"] is not None:
            updates["kind"] = options["kind"]
        if options["image_size"] is not None:
            updates["image_size"] = options["image_size"]
        if options["n"] is not None:
            if options["n"] < 1:
                raise ConfigError(f"--n must be at least 1, got {options['n']}")
            updates.update(train_count=options["n"], test_count=options["n"], tune_count=options["n"])
        return config.updated("dataset", **updates) if updates else config

    def run(self, config, options):
        return data_pipeline(config, splits=options["split"] or SPLITS)
