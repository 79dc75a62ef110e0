"""Exception hierarchy shared by the fitting, feature and I/O layers."""


class KinsurfError(Exception):
    """Base class for all library errors."""


class DegenerateField(KinsurfError):
    """The field has no isolated convergence point / axis for the request."""


class InvalidCenter(KinsurfError):
    pass


class DegenerateDenominator(KinsurfError):
    pass


class NumericalError(KinsurfError):
    """Base for failures of the linear-algebra machinery."""


class SingularNormalization(NumericalError):
    pass


class EigenFailure(NumericalError):
    pass


class RankDeficient(NumericalError):
    pass


class NotACriticalPoint(KinsurfError):
    pass


class DataError(KinsurfError):
    """Base for problems with input data (exit code 2 in the CLI)."""


class InsufficientPoints(DataError):
    pass


class InvalidSpec(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NoNormalsDerivable(DataError):
    pass


class EmptySlab(DataError):
    pass


class IoError(KinsurfError):
    """Output could not be written."""
