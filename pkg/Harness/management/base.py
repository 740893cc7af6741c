
from django.core.management.base import BaseCommand, CommandError

from Harness.config import ExperimentConfig
from Harness.pipeline import open_run, run_stage
from Master.validators import ContractViolation


class HarnessCommand(BaseCommand):
    """Shared flags for the stage commands; subclasses name their ``stages``."""

    stages = ()

    def add_arguments(self, parser):
        parser.add_argument('--config', required=True, help="Experiment config (JSON).")
        parser.add_argument('--seed', type=int, help="Root seed; overrides the config.")
        parser.add_argument('--out', help="Run directory; overrides the config.")
        parser.add_argument('--threads', type=int, help="Worker threads; overrides the config.")
        parser.add_argument('--baseline', help="Metrics CSV of a baseline run to compare against.")
        parser.add_argument('--no-record', action='store_true', help="Skip writing the run to the database.")

    def load_config(self, options):
        config = ExperimentConfig.from_file(options['config'])
        return config.with_overrides(seed=options['seed'], output_dir=options['out'], threads=options['threads'])

    def execute_stages(self, options):
        config = self.load_config(options)
        record = False if options['no_record'] else None
        ctx = open_run(config, baseline=options['baseline'], record=record)
        for stage in self.stages:
            run_stage(ctx, stage)
        ctx.writer.flush()
        return ctx

    def handle(self, *args, **options):
        try:
            ctx = self.execute_stages(options)
        except ContractViolation as exc:
            raise CommandError(str(exc)) from exc
        self.stdout.write(self.style.SUCCESS(f"{', '.join(self.stages)} finished in {ctx.writer.root}"))
