"""Exception hierarchy shared by all modules."""


class SgdSobolevError(Exception):
    """Base class for errors raised by this package."""


class DimensionError(SgdSobolevError, ValueError):
    """Operands have incompatible orders or dimensions."""


class ArgumentError(SgdSobolevError, ValueError):
    """An argument is outside its admissible range."""


class CapacityError(SgdSobolevError, MemoryError):
    """A dense materialization or enumeration would exceed its configured cap."""


class CompressionError(SgdSobolevError, RuntimeError):
    """Rank compression could not reach the requested tolerance.

    The achieved relative residual is kept on ``residual``.
    """

    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


class ParseError(SgdSobolevError, ValueError):
    """Malformed input file; ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
