"""Exception hierarchy shared by the solvers and certificates."""


class LCNSError(Exception):
    """Base class for all errors raised by lcns."""


class GridMismatch(LCNSError, ValueError):
    pass


class ParameterViolation(LCNSError, ValueError):
    pass


class PositivityViolation(LCNSError, ValueError):
    pass


class MassResidual(LCNSError, ValueError):
    pass


class CflViolation(LCNSError, ValueError):
    pass


class LinearSolveDiverged(LCNSError, RuntimeError):
    pass


class NonFiniteState(LCNSError, FloatingPointError):
    pass


class AlignmentError(LCNSError, ValueError):
    """Spike time or width is not a multiple of the time step."""


class ControlOutsideBall(LCNSError, ValueError):
    pass


class StagnationWithoutConvergence(LCNSError, RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class InfeasiblePenalty(LCNSError, RuntimeError):
    pass


class DegenerateMultiplier(LCNSError, ValueError):
    pass


class ConfigError(LCNSError, ValueError):
    """Collects every problem found while validating a config file."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(str(p) for p in self.problems))


class UnknownKey(ConfigError):
    pass


class TypeMismatch(ConfigError):
    pass


class MissingFile(ConfigError):
    pass
