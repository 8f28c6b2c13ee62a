"""Target search and tracking planner."""

from importlib.metadata import version, PackageNotFoundError

try:
    __version__ = version("sat-planner")
except PackageNotFoundError:
    __version__ = "0.0.0"
