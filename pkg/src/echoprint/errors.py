"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: config 2, data 3, protocol 4.
"""


class EchoprintError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class ConfigError(EchoprintError):
    """Invalid configuration value or file."""

    exit_code = 2


class DataError(EchoprintError):
    """Malformed or unusable input data."""

    exit_code = 3


class ProtocolError(EchoprintError):
    """Evaluation/training protocol cannot proceed as requested."""

    exit_code = 4


class FormatError(DataError):
    """File is not in the expected container format."""


class UnsupportedCodecError(DataError):
    """File encoding not supported (only 16-bit linear PCM WAV is)."""


class TooShortError(DataError):
    """Signal shorter than the minimum frame/window required."""


class ShapeError(DataError):
    """Matrix/vector dimensions do not line up."""


class DomainError(DataError):
    """Value outside the mathematical domain of an operation."""


class NoFingerprintError(DataError):
    """No reverberant content survived decomposition; nothing to fingerprint."""


class EmptyNegativesError(ProtocolError):
    """Contamination prefilter discarded the entire negative pool."""


class TrainingError(ProtocolError):
    """Classifier training impossible with the given samples."""
