"""Exception types raised across the package."""


class KsdBayesError(Exception):
    """Base class for all package errors."""


class InvalidInputError(KsdBayesError, ValueError):
    pass


class DegenerateDataError(KsdBayesError, ValueError):
    pass


class UnsupportedOperationError(KsdBayesError, NotImplementedError):
    pass


class CacheMismatchError(KsdBayesError, ValueError):
    """A Gram cache was used with data other than the data it was built from."""


class BoundsTooTightError(KsdBayesError, ValueError):
    """Quadrature grid truncates a non-negligible part of the density."""


class SamplerError(KsdBayesError, RuntimeError):
    pass


class ConfigError(KsdBayesError, ValueError):
    pass


class EssDegenerateWarning(UserWarning):
    """Chain has (numerically) zero variance; the ESS returned is a placeholder."""
