# main/management/base.py

import logging
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from genreg.exceptions import ConfigError, NumericalAbort
from main.config import ExperimentConfig, load_config

logger = logging.getLogger(__name__)

EXIT_CONFIG = 1
EXIT_NUMERICAL = 2


class ExperimentCommand(BaseCommand):
    """
    Shared flags and exit codes of the experiment commands: 0 on success,
    1 for a bad config or flag, 2 when the numerics abort.
    """

    def add_arguments(self, parser):
        parser.add_argument("--config", type=str, default=None, help="JSON experiment file")
        parser.add_argument("--seed", type=int, default=None, help="overrides the file's seed")
        parser.add_argument("--jobs", type=int, default=None, help="parallel solves (overrides GENREG_JOBS)")
        parser.add_argument("--out", type=str, default=None, help="output root (overrides GENREG_OUT)")

    def customize(self, config: ExperimentConfig, options) -> ExperimentConfig:
        """Apply command-specific flags before seed, jobs and output are resolved."""
        return config

    def run(self, config: ExperimentConfig, options) -> Path:
        raise NotImplementedError

    def handle(self, *args, **options):
        try:
            config = self.customize(load_config(options["config"]), options)
            config = config.resolved(seed=options["seed"], jobs=options["jobs"], out=options["out"])
            run_dir = self.run(config, options)
        except NumericalAbort as exc:
            logger.error(f"[Command] {self.name()} aborted: {exc}")
            raise CommandError(f"numerical abort: {exc}", returncode=EXIT_NUMERICAL) from exc
        except (ConfigError, ValueError, OSError) as exc:
            logger.error(f"[Command] {self.name()} failed: {exc}")
            raise CommandError(str(exc), returncode=EXIT_CONFIG) from exc

        self.stdout.write(self.style.SUCCESS(f"{self.name()}: wrote {run_dir}"))
        return None

    def name(self) -> str:
        return self.__class__.__module__.rsplit(".", 1)[-1]
