from Harness.management.base import HarnessCommand


class Command(HarnessCommand):
    help = "Compute saliency maps, their confidence and the group difference maps."
    stages = ('cam',)
