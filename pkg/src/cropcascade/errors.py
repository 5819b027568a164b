"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: configuration problems -> 1,
unreadable or malformed input files -> 2, backend failures -> 3.
"""


class ToolkitError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(ToolkitError, ValueError):
    """A value passed to an operation violates its preconditions."""


class EmptyIntersectionError(InvalidInputError):
    """A crop box does not intersect the image area."""


class InsufficientDataError(InvalidInputError):
    """Too few samples for the requested fit."""


class DegenerateDataError(InvalidInputError):
    """Data carries no variance to decompose."""


class InvalidLabelsError(InvalidInputError):
    """Label vector does not satisfy the training contract."""


class DimensionMismatchError(InvalidInputError):
    """Feature vector dimension does not match the fitted model."""


class ConfigError(ToolkitError, ValueError):
    """A config file, preset, or parameter combination is invalid."""


class ParseError(ToolkitError, ValueError):
    """An input data file is malformed; message names file and line."""


class ManifestError(ParseError):
    """Dataset manifest file could not be parsed."""


class RegistryError(ParseError):
    """Class registry file is invalid."""


class FixtureError(ParseError):
    """Scripted-backend fixture file is malformed."""


class BackendError(ToolkitError, RuntimeError):
    """A model backend failed or violated its output contract."""


class FixtureMissError(BackendError):
    """An image fingerprint is not present in the scripted fixture."""


class ConvergenceError(ToolkitError, RuntimeError):
    """Iterative solver hit its update cap before reaching tolerance."""


class EvaluationError(ToolkitError, ValueError):
    """Evaluation request cannot be satisfied (e.g. empty split)."""
