"""Exception hierarchy.

Errors fall in two families so the CLI can map them to exit codes:
``DataError`` (bad or insufficient input, exit 2) and ``NumericalError``
(a fit or search that failed, exit 3).
"""


class LabScreenError(Exception):
    """Base class for all package errors."""


class DataError(LabScreenError, ValueError):
    pass


class NumericalError(LabScreenError, ArithmeticError):
    pass


class InvalidKnotsError(DataError):
    pass


class InvalidInputError(DataError):
    pass


class DomainError(DataError):
    pass


class MissingCovariateError(DataError):
    def __init__(self, subject, columns=()):
        self.subject = subject
        self.columns = tuple(columns)
        detail = f" ({', '.join(map(str, self.columns))})" if self.columns else ""
        super().__init__(f"subject {subject!r} has missing covariates{detail}")


class InconsistentInputError(DataError):
    pass


class UnknownLabError(DataError):
    pass


class InsufficientControlsError(DataError):
    def __init__(self, month, needed, available):
        self.month = month
        self.needed = needed
        self.available = available
        super().__init__(
            f"month {month}: risk set has {available} eligible controls, need {needed}"
        )


class InsufficientDataError(DataError):
    pass


class DegenerateLabelsError(DataError):
    pass


class PairingError(DataError):
    pass


class ConfigError(DataError):
    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class SingularDesignError(NumericalError):
    def __init__(self, dependent_columns):
        self.dependent_columns = list(dependent_columns)
        super().__init__(
            "design matrix is rank deficient; dependent columns: "
            + ", ".join(map(str, self.dependent_columns))
        )


class UnderdeterminedError(NumericalError):
    pass


class NestingViolationError(NumericalError):
    pass


class ScanFailureError(NumericalError):
    pass
