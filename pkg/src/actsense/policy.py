"""Stationary policies as a per-state probability of the active action."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ACTIVE, SLEEP


@dataclass(frozen=True, eq=False)
class Policy:
    """``p_active[s]`` is the probability of choosing the active action in state ``s``.

    Deterministic, LP-derived, mixture and uniform-baseline policies all use
    this one representation.
    """

    p_active: np.ndarray
    name: str = ""

    def __post_init__(self):
        p = np.array(self.p_active, dtype=float)
        if p.ndim != 1:
            raise ValueError("p_active must be one-dimensional")
        if np.any(p < 0) or np.any(p > 1):
            raise ValueError("action probabilities must lie in [0, 1]")
        p.setflags(write=False)
        object.__setattr__(self, "p_active", p)

    @classmethod
    def from_actions(cls, actions, name=""):
        return cls(np.asarray(actions, dtype=float), name)

    @classmethod
    def constant(cls, n_states, p, name=""):
        return cls(np.full(n_states, float(p)), name)

    @property
    def n_states(self) -> int:
        return self.p_active.size

    @property
    def is_deterministic(self) -> bool:
        return bool(np.all((self.p_active == 0) | (self.p_active == 1)))

    @property
    def actions(self) -> np.ndarray:
        """Action per state; only defined for deterministic policies."""
        if not self.is_deterministic:
            raise ValueError("policy is randomized")
        return self.p_active.astype(np.int64)

    def matrix(self) -> np.ndarray:
        """``(n, 2)`` array of action probabilities."""
        return np.stack([1.0 - self.p_active, self.p_active], axis=1)

    def mix(self, other: "Policy", weight: float, name="") -> "Policy":
        """Per-decision mixture choosing ``self`` with probability ``weight``."""
        return Policy(weight * self.p_active + (1.0 - weight) * other.p_active, name)


def induced_chain(kernel: np.ndarray, policy: Policy) -> np.ndarray:
    """State-to-state transition matrix under ``policy``."""
    p = policy.p_active[:, None]
    return (1.0 - p) * kernel[:, SLEEP, :] + p * kernel[:, ACTIVE, :]
