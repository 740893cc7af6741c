from Harness.management.base import HarnessCommand


class Command(HarnessCommand):
    help = "Score every fold's validation subjects and write the metrics tables."
    stages = ('eval',)
