"""Exception hierarchy shared by all modules."""


class LipDirichletError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(LipDirichletError):
    """A point or region is not where the operation expects it."""


class ResolutionError(LipDirichletError):
    """The requested scale is below what the grid can resolve."""


class OrderError(LipDirichletError):
    """A derivative order exceeds what is cached or defined."""


class MultiIndexError(LipDirichletError):
    """A multi-index is out of the admissible range."""


class ParameterError(LipDirichletError):
    """Invalid numerical parameters (p, a, s, kernel exponents...)."""


class KernelParameterError(ParameterError):
    """Extension kernel cannot be normalized at some evaluation point."""


class MapParameterError(ParameterError):
    """Flattening map is not invertible with the chosen constant."""


class CapabilityError(LipDirichletError):
    """The requested operator/kernel combination is not supported."""


class SingularityError(LipDirichletError):
    """Evaluation at a singular point of a kernel."""


class ConditioningError(LipDirichletError):
    """An iterative solver stagnated."""

    def __init__(self, msg, diagnostics=None):
        super().__init__(msg)
        self.diagnostics = diagnostics or {}


class CompatibilityError(LipDirichletError):
    """Boundary data do not come from a compatible Whitney array."""


class AssemblyError(LipDirichletError):
    """Discretization objects do not fit together."""


class ConfigError(LipDirichletError):
    """A configuration or input file cannot be parsed."""

    def __init__(self, msg, line=None, column=None):
        loc = "" if line is None else f" (line {line}, column {column})"
        super().__init__(msg + loc)
        self.message = msg
        self.line = line
        self.column = column
