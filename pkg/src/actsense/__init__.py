"""Energy- and data-constrained activity sensing: CMDP solvers, dynamic programming,
multiplier search, mixture policies, Q-learning and simulation."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ActsenseError, ConfigError, DegenerateMixture, Infeasible, MaxPivots, ModelError,
    NoFeasibleLambda, NotConverged, NotErgodic, NotThreshold, NumericalError, Unbounded,
)
from .model import (  # noqa: E402
    ACTIVE, SLEEP, FiniteCMDP, SensingModel, StateSpace, default_model, load_model,
    model_from_config,
)
from .policy import Policy  # noqa: E402
