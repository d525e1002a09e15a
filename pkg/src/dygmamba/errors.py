"""Exception hierarchy shared across the package."""


class DyGMambaError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(DyGMambaError, ValueError):
    pass


class ConfigurationError(DyGMambaError, ValueError):
    pass


class ContractError(DyGMambaError, ValueError):
    """A precondition of an operation was violated by the caller."""


class StateError(DyGMambaError, RuntimeError):
    pass


class NumericError(DyGMambaError, ArithmeticError):
    """A non-finite value appeared where finiteness is required."""


class ParseError(DyGMambaError, ValueError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)


class UnknownNodeError(DyGMambaError, KeyError):
    pass


class TooSmallError(DyGMambaError, ValueError):
    pass


class DegenerateWindowError(DyGMambaError, ValueError):
    pass


class SingularityError(DyGMambaError, ZeroDivisionError):
    pass


class AttentionEmptyError(DyGMambaError, ValueError):
    pass


class EmptySequenceError(DyGMambaError, ValueError):
    pass


class SamplingError(DyGMambaError, RuntimeError):
    pass


class MetricUndefinedError(DyGMambaError, ValueError):
    pass
