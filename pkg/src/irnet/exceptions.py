"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: validation problems (bad shapes, bad
files) exit with 2, numeric failures (divergence, non-finite values) with 3.
"""


class IrnetError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(IrnetError, ValueError):
    """Array shapes do not line up."""


class ValidationError(IrnetError, ValueError):
    """Input violates a documented contract (negativity, simplex, config)."""


class DataFormatError(ValidationError):
    """On-disk artifact is malformed; message names the file and line."""


class NumericError(IrnetError, RuntimeError):
    """Non-finite values or other numeric breakdown during iteration."""


class ConvergenceError(NumericError):
    """Iterative routine failed to converge within its budget."""
