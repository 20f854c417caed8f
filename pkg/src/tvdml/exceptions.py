"""Exception hierarchy shared by the ingestion, estimation and CLI layers."""


class TvdmlError(Exception):
    """Base class for all package errors."""


class SchemaError(TvdmlError):
    """Input file does not match the declared column schema."""


class DataError(TvdmlError):
    """Input values violate a data invariant (non-binary treatment, missing covariate, ...)."""


class EstimationError(TvdmlError):
    """An estimation step cannot proceed (empty fitting set, singular system, ...).

    ``time`` carries the 1-based time label when the failure is tied to one.
    """

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class ConfigError(TvdmlError):
    """Invalid run configuration."""
