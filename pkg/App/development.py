from App.settings import *  # noqa: F401,F403

DEBUG = True

LOG_LEVEL = 'DEBUG'
LOGGING['root']['level'] = LOG_LEVEL

# Runs produced while developing stay out of the default root.
HARNESS_OUTPUT_ROOT = str(BASE_DIR / 'runs-dev')
