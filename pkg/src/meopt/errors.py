"""Exception types shared across the package."""


class MeoptError(Exception):
    """Base class for all package-specific errors."""


class InvalidInputError(MeoptError, ValueError):
    """An argument violates a documented precondition."""


class DimensionMismatchError(InvalidInputError):
    """Operands live on different manifolds or have incompatible shapes."""


class DegenerateInputError(MeoptError, ValueError):
    """Input at or beyond a cut locus / degenerate configuration."""


class StepTooLargeError(MeoptError, RuntimeError):
    """A retraction step left its admissible range (|dr| >= r for the canonical map)."""


class UnsupportedRetractionError(MeoptError, ValueError):
    """Retraction not defined for this manifold."""


class DegenerateStepError(MeoptError, RuntimeError):
    """A retraction step produced a degenerate output (e.g. zero embedding vector)."""


class NonDescentError(MeoptError, RuntimeError):
    """The descent guard exhausted its step-size halvings without decreasing the objective."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class InadmissibleRadiusError(InvalidInputError):
    """A cell radius violates the separation or injectivity requirements."""

    def __init__(self, message, max_admissible=None):
        super().__init__(message)
        self.max_admissible = max_admissible
