"""Exception hierarchy shared by all pipeline stages."""


class BikeBalanceError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(BikeBalanceError):
    """Bad configuration: missing columns, unreadable files, invalid thresholds."""


class PipelineError(BikeBalanceError):
    """A pipeline stage could not produce its output (e.g. too few stations)."""


class ContractViolationError(BikeBalanceError):
    """An operation was called with input that breaks its documented contract."""


class NotDefinedForEmptyDayError(BikeBalanceError):
    """Normalization requested for a station-day with zero events."""


class ValidityIndexError(BikeBalanceError):
    """A cluster validity index is undefined for the given model."""
