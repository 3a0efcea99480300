"""Exception hierarchy shared by the library and the command line."""


class TCTError(Exception):
    """Base class for library errors."""


class ConfigurationError(TCTError, ValueError):
    """Invalid user-supplied option or parameter."""


class DimensionError(TCTError, ValueError):
    """Shapes or dimension profiles that do not agree."""


class NumericalError(TCTError, ArithmeticError):
    """A numerical routine failed to converge or hit a singular system."""

    def __init__(self, message, residual=None, where=None):
        super().__init__(message)
        self.residual = residual
        self.where = where
