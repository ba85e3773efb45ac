"""Exception types shared across the package."""


class PmrmError(Exception):
    """Base class for all package errors."""


class ParseError(PmrmError):
    """Malformed input file content (carries a line number where possible)."""


class ValidationError(PmrmError):
    """Data violates a structural invariant."""


class ContractError(PmrmError):
    """Arguments violate an operation contract (wrong variant, layout, selector)."""


class EvaluationError(PmrmError):
    """A model value could not be evaluated (non-finite mean)."""

    def __init__(self, message, subject_id=None, visit_index=None):
        super().__init__(message)
        self.subject_id = subject_id
        self.visit_index = visit_index


class InitializationError(PmrmError):
    """Starting values could not be derived from the data."""


class FitError(PmrmError):
    """Model fitting could not be carried out."""


class SingularInformationError(FitError):
    """Observed information is singular; names the flat direction."""

    def __init__(self, message, direction=None):
        super().__init__(message)
        self.direction = direction
