"""Exception hierarchy shared by the library and the CLI exit-code mapping."""


class GradwaveError(Exception):
    """Base class for all library errors."""

    code = "E_GRADWAVE"


class InvalidArgument(GradwaveError, ValueError):
    code = "E_INVALID_ARGUMENT"


class DependentConstraints(GradwaveError):
    """Raised when the affine rows are (numerically) linearly dependent."""

    code = "E_DEPENDENT_CONSTRAINTS"

    def __init__(self, message, labels=()):
        super().__init__(message)
        self.labels = tuple(labels)


class InfeasibleConstraints(GradwaveError):
    code = "E_INFEASIBLE"


class NumericFailure(GradwaveError, ArithmeticError):
    code = "E_NUMERIC"
