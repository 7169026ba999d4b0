"""Exception types shared across the package.

The CLI maps these onto stable exit codes (see ``drcit.cli``).
"""


class DrcitError(Exception):
    """Base class for all package errors."""


class UsageError(DrcitError, ValueError):
    """A caller violated a precondition (shapes, ranges, configuration)."""


class InputError(DrcitError, ValueError):
    """Malformed external input such as a ragged or non-numeric CSV file."""


class TrainingError(DrcitError, RuntimeError):
    """Generator training diverged or produced non-finite values."""

    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class ConsistencyError(DrcitError, AssertionError):
    """Two routes to the same exact quantity disagreed."""
