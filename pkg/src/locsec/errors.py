"""Exception types shared across the package."""


class LocsecError(Exception):
    """Base class for all package errors."""


class RangeError(LocsecError, IndexError):
    """A time-index range falls outside the window."""


class NotPositiveDefinite(LocsecError):
    """Cholesky factorisation hit a pivot below the scale-aware tolerance.

    Detectors use this as a control-flow signal (e.g. a failed covariance gate),
    not as a fault.
    """


class DegenerateWindow(LocsecError):
    """The window has (numerically) zero spread in some direction."""


class InvalidCubic(LocsecError, ValueError):
    """Leading cubic coefficient is zero."""


class ConfigError(LocsecError, ValueError):
    """Invalid configuration or detector setup."""


class EmCollapse(LocsecError):
    """A mixture component lost its support or its covariance stopped being PD."""
