"""Exception types shared across the package.

The CLI maps these onto exit codes: validation problems exit with 2,
I/O problems with 3, convergence/budget problems with 4.
"""


class PhenofcmError(Exception):
    """Base class for all package errors."""


class ValidationError(PhenofcmError):
    """Input violates a documented precondition or invariant."""


class ParseError(PhenofcmError):
    """A file is structurally malformed; the message names the offending row."""


class FeatureMismatchError(ValidationError):
    """Requested features are absent or disagree with a fitted model."""


class BudgetExceededError(PhenofcmError):
    """An enumeration would exceed the configured combinatorial budget."""
