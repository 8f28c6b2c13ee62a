"""Allow running the package with `python -m sat_planner`."""

import sys

from sat_planner.cli import main

sys.exit(main())
