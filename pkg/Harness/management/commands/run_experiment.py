from django.core.management.base import CommandError

from Harness.management.base import HarnessCommand
from Harness.pipeline import STAGES, run_experiment
from Master.validators import ContractViolation


class Command(HarnessCommand):
    help = "Run every stage of an experiment: synth, dfnc, train, eval, cam and report."
    stages = STAGES

    def handle(self, *args, **options):
        try:
            config = self.load_config(options)
            ctx = run_experiment(config, baseline=options['baseline'],
                                 record=False if options['no_record'] else None)
        except ContractViolation as exc:
            raise CommandError(str(exc)) from exc
        self.stdout.write(self.style.SUCCESS(f"Run finished in {ctx.writer.root}"))
