from django.core.management.base import CommandError

from Harness.acceptance import CHECKS, check_run
from Harness.management.base import HarnessCommand
from Master.validators import ContractViolation


class Command(HarnessCommand):
    help = "Check a finished synthetic run against its planted ground truth."

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--check', action='append', choices=sorted(CHECKS),
                            help="Check to run; repeat for several. Defaults to all of them.")

    def handle(self, *args, **options):
        try:
            config = self.load_config(options)
            results = check_run(config, names=options['check'])
        except ContractViolation as exc:
            raise CommandError(str(exc)) from exc
        for result in results:
            style = self.style.SUCCESS if result.passed else self.style.ERROR
            self.stdout.write(style(f"{result.name}: {result.detail}"))
        failed = [r.name for r in results if not r.passed]
        if failed:
            raise CommandError(f"Failed checks: {', '.join(failed)}")
