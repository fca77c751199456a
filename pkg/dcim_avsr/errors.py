"""Exceptions raised by dcim_avsr.

Everything derives from AVSRError so callers (the CLI in particular) can
catch the package's failures in one place. Errors caused by bad values also
derive from ValueError.
"""


class AVSRError(Exception):
    pass


class ShapeError(AVSRError, ValueError):
    pass


class TapeError(AVSRError):
    pass


class ConfigError(AVSRError, ValueError):
    pass


class InputTooShortError(AVSRError, ValueError):
    pass


class AlignmentError(AVSRError, ValueError):
    pass


class EmptyInputError(AVSRError, ValueError):
    pass


class TokenError(AVSRError, ValueError):
    pass


class UndefinedRateError(AVSRError, ValueError):
    pass


class UndefinedSNRError(AVSRError, ValueError):
    pass


class FormatError(AVSRError, ValueError):
    """A .dwv or .dvc file does not parse."""


class CheckpointError(AVSRError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class IncompatibleCheckpointError(CheckpointError):
    pass


class DivergenceError(AVSRError):
    """Training produced a non-finite loss."""
