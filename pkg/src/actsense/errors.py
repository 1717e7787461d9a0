"""Exception types shared across the package."""


class ActsenseError(Exception):
    """Base class for all package errors."""


class ConfigError(ActsenseError, ValueError):
    """A model config file is malformed. ``key`` names the offending entry."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class ModelError(ActsenseError, ValueError):
    """A model violates one of its structural invariants."""


class NumericalError(ActsenseError):
    """Base class for solver failures (exit code 1 from the CLI)."""


class Infeasible(NumericalError):
    pass


class Unbounded(NumericalError):
    pass


class MaxPivots(NumericalError):
    pass


class NotConverged(NumericalError):
    def __init__(self, message, residual=None, trace=None):
        super().__init__(message)
        self.residual = residual
        self.trace = trace


class NoFeasibleLambda(NumericalError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class NotErgodic(NumericalError):
    pass


class DegenerateMixture(NumericalError):
    pass


class NotThreshold(NumericalError):
    """A deterministic policy is not monotone in the battery level."""

    def __init__(self, u, e, b):
        super().__init__(f"policy is not a threshold policy: first violation at u={u}, e={e}, b={b}")
        self.u, self.e, self.b = u, e, b
