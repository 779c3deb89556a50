"""Exception types raised across the package."""


class GmmCmeError(Exception):
    """Base class for all package errors."""


class NotPositiveDefinite(GmmCmeError, ArithmeticError):
    """A Cholesky pivot was non-positive even after diagonal loading."""


class DimensionMismatch(GmmCmeError, ValueError):
    pass


class LengthMismatch(GmmCmeError, ValueError):
    pass


class CorruptFile(GmmCmeError, ValueError):
    """Bad magic, unsupported version, or inconsistent length on read."""


class ParseError(GmmCmeError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DegenerateDataset(GmmCmeError, ValueError):
    pass


class EmptyDataset(GmmCmeError, ValueError):
    pass


class DegenerateComponent(GmmCmeError, RuntimeError):
    """A mixture component collapsed during EM and could not be recovered."""


class RankDeficientSupport(GmmCmeError, ArithmeticError):
    pass


class ConfigError(GmmCmeError, ValueError):
    pass
