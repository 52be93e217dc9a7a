"""Exception hierarchy shared by every module."""


class EmsError(Exception):
    """Base class for all package errors."""


class ConfigError(EmsError, ValueError):
    pass


class InvalidInputError(EmsError, ValueError):
    pass


class ParseError(EmsError, ValueError):
    def __init__(self, message: str, line_no: int | None = None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class EmptyCorpusError(EmsError, ValueError):
    pass


class DegenerateError(EmsError, ArithmeticError):
    """Cosine or margin undefined (zero norm / zero denominator)."""


class NumericalError(EmsError, ArithmeticError):
    """Non-finite loss or parameter during training."""

    def __init__(self, message: str, step: int | None = None, batch_index: int | None = None):
        self.step = step
        self.batch_index = batch_index
        super().__init__(f"{message} (step={step}, batch={batch_index})")
