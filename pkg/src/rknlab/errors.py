"""Exception hierarchy shared across the package."""


class RknError(Exception):
    """Base class for all package errors."""


class InvalidParameter(RknError):
    """A model or noise parameter is out of its valid range."""


class NotPositiveDefinite(RknError):
    """A matrix expected to be SPD failed its Cholesky factorization."""


class EmptyEnsemble(RknError):
    """A metric was requested on an ensemble with no series."""


class Diverged(RknError):
    """Training produced a non-finite loss or an unrecoverable covariance."""


class ParseError(RknError):
    """A stored artifact could not be parsed."""


class FormatVersionMismatch(ParseError):
    """A stored artifact declares an unsupported format version."""


class SpecMismatch(RknError):
    """A checkpoint's network specification does not match the requested model."""


class FingerprintMismatch(RknError):
    """A dataset on disk does not match the fingerprint it is paired with."""


class ConfigError(RknError):
    """Configuration validation failure; carries the offending field path."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
