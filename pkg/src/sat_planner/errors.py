"""Exception hierarchy shared by the library, the CLI and the MCP server."""

from typing import Optional


class SatPlannerError(Exception):
    """Base class for every error raised by sat_planner."""


class InputDomainError(SatPlannerError, ValueError):
    """An argument lies outside the domain an operation accepts."""


class MapParseError(InputDomainError):
    """Map text could not be parsed.

    ``line_number`` is 1-based and points at the offending line of the input.
    """

    def __init__(self, message: str, line_number: Optional[int] = None) -> None:
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class NumericDomainError(SatPlannerError, ArithmeticError):
    """A matrix or parameter is numerically invalid (e.g. not SPD)."""


class DegeneratePosteriorError(SatPlannerError):
    """Every particle received zero likelihood for the measurement."""


class InternalInvariantError(SatPlannerError, AssertionError):
    """A structure handed between modules violates its invariants."""


class PlannerStuckError(SatPlannerError):
    """No collision-free action exists at the root of the search tree."""


class ScenarioError(SatPlannerError):
    """A scenario file is missing, unreadable or references missing files."""
