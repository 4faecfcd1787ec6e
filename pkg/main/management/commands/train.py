from main.management.base import ExperimentCommand
from main.pipelines import train_pipeline


class Command(ExperimentCommand):
    help = "Train an AE, VAE or WGAN-GP generator and write its checkpoint and loss CSV"

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--kind", choices=["ae", "vae", "gan"], default=None)
        parser.add_argument("--epochs", type=int, default=None)

    def customize(self, config, options):
        if options["kind"] is not None:
            config = config.updated("model", kind=options["kind"])
        if options["epochs"] is not None:
            train = config.model.train.model_dump()
            train["epochs"] = options["epochs"]
            config = config.updated("model", train=train)
        return config

    def run(self, config, options):
        return train_pipeline(config)
