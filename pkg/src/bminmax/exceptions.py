"""Exception hierarchy shared by every module of the package."""


class BMinMaxError(ValueError):
    """Base class for all errors raised by bminmax."""


class ConfigError(BMinMaxError):
    """Invalid parameters (sample size, ratio, experiment settings)."""


class DataError(BMinMaxError):
    """Input data that cannot be sampled or decoded."""


class AssumptionError(ConfigError):
    """Arguments outside the region where a closed form is defined."""


class PayloadError(DataError):
    """A wire payload that is malformed, truncated or inconsistent."""
