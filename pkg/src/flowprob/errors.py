"""Exception hierarchy shared by all flowprob modules."""


class FlowProbError(Exception):
    """Base class for every error raised by flowprob."""


class SchemaError(FlowProbError):
    """A configuration document is malformed."""


class TopologyError(FlowProbError):
    """The network graph violates a structural requirement."""


class DimensionMismatch(FlowProbError, ValueError):
    pass


class NegativeSquaredPressure(FlowProbError):
    """A load vector drives some squared pressure below zero."""


class NewtonDivergence(FlowProbError):
    pass


class OutOfDomain(FlowProbError, ValueError):
    pass


class EmptyWindow(FlowProbError, ValueError):
    pass


class CFLViolation(FlowProbError, ValueError):
    pass


class CholeskyFailure(FlowProbError):
    pass


class ZeroVariance(FlowProbError, ValueError):
    pass


class InsufficientRuns(FlowProbError, ValueError):
    pass


class NonpositivePressureSample(FlowProbError, ValueError):
    pass


class InfeasibleAlpha(FlowProbError):
    """The requested probability level cannot be reached."""


class LineSearchStall(FlowProbError):
    pass
