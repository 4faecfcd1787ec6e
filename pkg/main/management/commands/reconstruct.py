from main.management.base import ExperimentCommand
from main.pipelines import reconstruct_pipeline
from solvers.methods import METHODS


class Command(ExperimentCommand):
    help = "Solve an inverse problem with the configured methods over a lambda x mu grid and write the result tables"

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--checkpoint", type=str, default=None, help="model directory written by `train`")
        parser.add_argument("--method", action="append", choices=METHODS, default=None, help="repeatable")

    def customize(self, config, options):
        if options["checkpoint"]:
            config = config.updated("model", checkpoint=options["checkpoint"])
        if options["method"]:
            config = config.updated("solver", methods=options["method"])
        return config

    def run(self, config, options):
        return reconstruct_pipeline(config)
