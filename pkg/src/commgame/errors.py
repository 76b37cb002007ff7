"""Exception types shared across the package."""


class CommgameError(Exception):
    """Base class for all package errors."""


class ShapeError(CommgameError):
    """Operand shapes are incompatible."""


class ContractError(CommgameError):
    """An API precondition was violated."""


class ConfigError(CommgameError):
    """Invalid configuration value."""


class NumericError(CommgameError):
    """Non-finite value produced during computation."""


class DataFormatError(CommgameError):
    """Malformed input file; message carries the offending line number."""


class LabelError(CommgameError):
    """Unknown label string in a corpus file."""


class InputError(CommgameError):
    """Invalid model input (e.g. empty token sequence)."""


class AlignmentError(CommgameError):
    """Paired collections do not share the same example ids."""


class MetricUndefinedError(CommgameError):
    """A metric was requested on an empty or degenerate input."""


class FingerprintMismatchError(CommgameError):
    """Checkpoint vocabulary fingerprint does not match the loaded vocabulary."""
