"""Exception types shared across the package."""


class AdvCPError(Exception):
    """Base class for all package errors."""


class ParameterError(AdvCPError, ValueError):
    """Invalid argument values or inconsistent parameters."""


class StratificationError(ParameterError):
    """A class has too few examples to be split."""


class FormatError(AdvCPError, ValueError):
    """Malformed input file. ``line`` is 1-based when known."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class NumericError(AdvCPError, ArithmeticError):
    """Non-finite values appeared during a computation."""


class EquilibriumError(AdvCPError, RuntimeError):
    """Support enumeration found no equilibrium (tolerance problem)."""


class ConfigError(AdvCPError, ValueError):
    """Bad run configuration."""
