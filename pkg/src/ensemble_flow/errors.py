"""Exception hierarchy shared across the package."""


class EnsembleFlowError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatchError(EnsembleFlowError, ValueError):
    """Shapes of model objects are inconsistent with each other."""


class PreconditionError(EnsembleFlowError, ValueError):
    """An operation was called with inputs outside its contract."""


class SupportViolationError(EnsembleFlowError, ValueError):
    """p places mass where q is zero, so the divergence is infinite.

    The offending flat indices are available as ``indices``.
    """

    def __init__(self, message, indices=()):
        super().__init__(message)
        self.indices = tuple(indices)


class InfeasibleMarginalsError(EnsembleFlowError):
    """The prescribed marginals cannot be coupled on the prior support."""


class ConvergenceError(EnsembleFlowError):
    """Iteration budget exhausted before reaching the requested tolerance."""

    def __init__(self, message, residual=None, trace=None):
        super().__init__(message)
        self.residual = residual
        self.trace = list(trace) if trace is not None else None


class DegenerateSupportError(EnsembleFlowError):
    """A scaling update produced 0/0; the instance has degenerate support.

    ``time_index`` is 1-based, ``index`` names the state or symbol.
    """

    def __init__(self, message, time_index=None, index=None):
        super().__init__(message)
        self.time_index = time_index
        self.index = index


class FactorizationError(EnsembleFlowError):
    """A transfer plan cannot be factored against its source marginal."""


class NetworkModelError(EnsembleFlowError):
    """The network geometry does not admit the requested transition model."""


class EnumerationBoundError(EnsembleFlowError, ValueError):
    """Instance is too large for exhaustive enumeration."""


class SchemaError(EnsembleFlowError, ValueError):
    """A JSON document does not match the expected schema.

    ``path`` is a '/'-joined location inside the document.
    """

    def __init__(self, message, path=""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
