from main.management.base import ExperimentCommand
from main.pipelines import evaluate_pipeline


class Command(ExperimentCommand):
    help = "Generator diagnostics: reconstruction NRMSE, EMD, latent projections, interpolations, far-from-prior samples"

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--checkpoint", type=str, default=None, help="model directory written by `train`")

    def customize(self, config, options):
        if options["checkpoint"]:
            config = config.updated("model", checkpoint=options["checkpoint"])
        return config

    def run(self, config, options):
        return evaluate_pipeline(config)
