"""Exception hierarchy shared by all modules."""


class DCLSError(Exception):
    """Base class for library errors."""


class DomainError(DCLSError):
    """A function was evaluated outside its domain (non-finite values, flow blow-up)."""


class UnsupportedOperationError(DCLSError):
    pass


class RegularityError(DCLSError):
    """A rank or nonsingularity requirement failed."""


class DegenerateBundleError(RegularityError):
    """The stacked boundary Jacobian [J-; J+] is numerically singular."""


class InversionError(DCLSError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class AdjacencyError(DCLSError):
    """Two states do not share a junction point, i.e. d+(v) != d-(w)."""


class FirstOrderError(DCLSError):
    def __init__(self, message, index=None, violation=None):
        super().__init__(message)
        self.index = index
        self.violation = violation


class ConvergenceError(DCLSError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class ConfigError(DCLSError):
    def __init__(self, message, key=None, line=None):
        super().__init__(message)
        self.key = key
        self.line = line
