from Harness.management.base import HarnessCommand


class Command(HarnessCommand):
    help = "Render the run's heatmaps as SVG figures."
    stages = ('report',)
