"""Exception taxonomy shared by all latentforge modules.

Every error the toolkit raises on purpose derives from LatentForgeError, so
callers (and the CLI exit-code mapping) can distinguish deliberate failures
from bugs.
"""


class LatentForgeError(Exception):
    """Base class for all toolkit errors."""


class InputError(LatentForgeError):
    """An argument value is outside the operation's domain."""


class DimensionError(InputError):
    """Vector dimensions do not agree."""


class InvariantError(LatentForgeError):
    """A domain-type invariant was violated."""


class ConfigError(LatentForgeError):
    """A configuration references something missing or inconsistent."""


class TrainingError(LatentForgeError):
    """Boundary training cannot proceed (degenerate data, no direction)."""


class BackendError(LatentForgeError):
    """A generator/labeler backend failed while producing samples."""


class IoError(LatentForgeError):
    """A file or directory could not be read or written."""


class FormatError(IoError):
    """A file exists but does not parse as the declared format."""


class DataError(LatentForgeError):
    """Referenced data (embeddings, samples) is missing or inconsistent."""


class DependencyError(LatentForgeError):
    """A pipeline stage was requested before its inputs exist."""


class DegenerateError(LatentForgeError):
    """An input sits in a measure-zero configuration the operation cannot handle."""
