"""Exception hierarchy shared by every stage of the pipeline."""


class WheezeBiasError(Exception):
    """Base class for all package errors."""


class ArgumentError(WheezeBiasError, ValueError):
    """An argument is outside its documented domain."""


class FormatError(WheezeBiasError, ValueError):
    """A binary or text payload is malformed."""


class UnsupportedError(FormatError):
    """A well-formed payload uses an encoding we do not handle."""


class EmptyInputError(WheezeBiasError, ValueError):
    pass


class ParseError(FormatError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class RangeError(WheezeBiasError, IndexError):
    pass


class InternalError(WheezeBiasError, RuntimeError):
    pass


class DegenerateDataError(WheezeBiasError, ValueError):
    """Training data lacks one of the two classes."""


class SingularMatrixError(WheezeBiasError, ArithmeticError):
    pass


class ConvergenceError(WheezeBiasError, RuntimeError):
    """An iterative solver hit its iteration cap.

    The best iterate reached so far is kept on ``best`` so callers can
    still use it.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class ArchitectureError(WheezeBiasError, ValueError):
    pass


class SearchError(WheezeBiasError, RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []
