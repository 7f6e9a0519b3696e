"""Exception hierarchy shared by the toolkit.

The CLI maps these onto its exit-code buckets: parameter errors are usage
problems (2), data/shape/format errors are broken inputs (3), numerical
errors are failed computations (4), and unknown-class errors get their own
code (5) so callers can react to a mask/bank mismatch specifically.
"""


class ToolkitError(Exception):
    """Base class for all toolkit errors."""


class ParameterError(ToolkitError):
    """An argument violates a documented precondition."""


class ShapeError(ToolkitError):
    """Array shapes or dimensions do not line up."""


class DataError(ToolkitError):
    """Input data violates an invariant (non-finite values, bad ids, ...)."""


class CorpusError(DataError):
    """A corpus record is invalid; the message names the record id."""


class FormatError(ToolkitError):
    """A serialized file is malformed, truncated, or of the wrong version."""


class NumericalError(ToolkitError):
    """A numerical routine failed to produce a usable result."""


class TrainingError(NumericalError):
    """Training diverged; the message reports the offending step."""


class UnknownClassError(DataError):
    """A mask references a class the prior bank has no statistics for."""
