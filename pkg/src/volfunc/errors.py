"""Error taxonomy shared across the package.

Two failure families matter to callers (and to the command-line exit
codes): problems with inputs or configuration, and numerical failures at
run time.  Everything raised on purpose by this package derives from one
of the classes below, so the CLI can map exceptions to exit codes without
string matching.
"""
from __future__ import annotations


class ValidationError(ValueError):
    """Invalid input, configuration, or data (CLI exit code 2)."""


class GuardViolation(ValidationError):
    """A functional was evaluated outside its domain guard."""


class InsufficientDataError(ValidationError):
    """Too few samples for the requested statistic."""


class NumericalError(RuntimeError):
    """A numerical procedure failed to converge or lost validity (CLI exit code 1)."""
