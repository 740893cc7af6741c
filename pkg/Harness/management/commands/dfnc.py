from Harness.management.base import HarnessCommand


class Command(HarnessCommand):
    help = "Compute tapered sliding-window connectivity for every subject."
    stages = ('dfnc',)
