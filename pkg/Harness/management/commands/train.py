from Harness.management.base import HarnessCommand


class Command(HarnessCommand):
    help = "Train one classifier per cross-validation fold and write checkpoints."
    stages = ('train',)
