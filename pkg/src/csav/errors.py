"""Exception hierarchy shared by every module."""


class CSAVError(Exception):
    """Base class for all library errors."""


class ConfigurationError(CSAVError, ValueError):
    """Invalid grid, model, scheme or run configuration."""


class GridMismatchError(CSAVError, ValueError):
    """A field does not live on the grid it is used with."""


class SingularOperatorError(CSAVError, ArithmeticError):
    """A diagonal solve or scalar elimination hit a zero denominator."""


class BootstrapRequiredError(CSAVError, RuntimeError):
    """A two-step scheme was called without its history level."""


class DivergenceError(CSAVError, FloatingPointError):
    """A step produced non-finite values.

    ``step`` is the index of the step that failed and ``last_state`` the
    last state that was still finite (may be ``None``).
    """

    def __init__(self, message, step=None, last_state=None):
        super().__init__(message)
        self.step = step
        self.last_state = last_state
