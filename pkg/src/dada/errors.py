"""Exception hierarchy shared by every module."""


class DadaError(Exception):
    """Base class for all library errors."""


class DimensionError(DadaError, ValueError):
    """Operand shapes are incompatible or an axis is out of range."""


class DomainError(DadaError, ValueError):
    """Input lies outside an operation's mathematical domain."""


class ContractError(DadaError, ValueError):
    """A documented precondition was violated by the caller."""


class ConfigError(DadaError, ValueError):
    """Invalid configuration or hyperparameter value."""


class ParseError(DadaError, ValueError):
    """Malformed input file.  ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
