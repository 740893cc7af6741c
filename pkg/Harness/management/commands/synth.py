from Harness.management.base import HarnessCommand


class Command(HarnessCommand):
    help = "Generate the synthetic cohort (or ingest the labels of a file-based one)."
    stages = ('synth',)
