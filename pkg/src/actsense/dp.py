"""Discounted dynamic programming on the Lagrangian cost and structural checks."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NotConverged, NotThreshold
from .model import ACTIVE, SLEEP
from .policy import Policy

VI_TOL = 1e-8
MAX_SWEEPS = 100_000
TIE_TOL = 1e-12
STRUCTURE_TOL = 1e-9
GENUINE_TIE = 1e-6


@dataclass
class ValueIterationResult:
    value: np.ndarray
    q: np.ndarray
    actions: np.ndarray
    residuals: list = field(default_factory=list)
    lam: float = 0.0
    beta: float = 0.0

    @property
    def sweeps(self) -> int:
        return len(self.residuals)

    @property
    def policy(self) -> Policy:
        return Policy.from_actions(self.actions, name=f"vi(lambda={self.lam:.6g})")

    @property
    def gap(self) -> np.ndarray:
        """``Q(s, active) - Q(s, sleep)``; negative where activation is preferred."""
        return self.q[:, ACTIVE] - self.q[:, SLEEP]


def bellman_q(kernel, cost, v, beta):
    return cost + beta * np.einsum("sat,t->sa", kernel, v)


def greedy_actions(q: np.ndarray, tie_tol: float = TIE_TOL) -> np.ndarray:
    """Argmin over actions; an action replaces a lower-indexed one only if better by ``tie_tol``."""
    best = np.zeros(q.shape[0], dtype=np.int64)
    best_val = q[:, 0].copy()
    for a in range(1, q.shape[1]):
        better = q[:, a] < best_val - tie_tol
        best[better] = a
        best_val[better] = q[better, a]
    return best


def value_iteration(model, lam: float, beta: float | None = None, tol: float = VI_TOL,
                    max_sweeps: int = MAX_SWEEPS, tie_tol: float = TIE_TOL,
                    v0: np.ndarray | None = None) -> ValueIterationResult:
    """Iterate ``v <- min_a [c_lam + beta P v]`` until the sup-norm step is at most ``tol``."""
    if beta is None:
        beta = model.discount
    if not 0.0 <= beta < 1.0:
        raise ValueError("beta must lie in [0, 1)")
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    kernel = model.kernel
    cost = model.lagrangian_cost(lam)
    v = np.zeros(kernel.shape[0]) if v0 is None else np.array(v0, dtype=float)
    residuals = []
    for _ in range(max_sweeps):
        v_new = bellman_q(kernel, cost, v, beta).min(axis=1)
        r = float(np.max(np.abs(v_new - v)))
        residuals.append(r)
        v = v_new
        if r <= tol:
            break
    else:
        raise NotConverged(f"value iteration residual {residuals[-1]:.3e} after {max_sweeps} sweeps",
                           residual=residuals[-1], trace=residuals)
    q = bellman_q(kernel, cost, v, beta)
    return ValueIterationResult(q.min(axis=1), q, greedy_actions(q, tie_tol), residuals, lam, beta)


def policy_evaluation(model, policy, lam: float, beta: float | None = None) -> np.ndarray:
    """Discounted Lagrangian cost of a fixed stationary policy, by a direct linear solve."""
    if beta is None:
        beta = model.discount
    if not isinstance(policy, Policy):
        policy = Policy.from_actions(policy)
    kernel = model.kernel
    pm = policy.matrix() if kernel.shape[1] == 2 else _one_hot(policy, kernel.shape[1])
    P = np.einsum("sa,sat->st", pm, kernel)
    c = np.sum(pm * model.lagrangian_cost(lam), axis=1)
    n = P.shape[0]
    A = np.eye(n) - beta * P
    assert beta < 1.0, "fixed-point system is singular only for beta = 1"
    v = np.linalg.solve(A, c)
    resid = np.max(np.abs(c + beta * P @ v - v))
    if resid > 1e-10 * max(1.0, np.max(np.abs(v))):
        v = v + np.linalg.solve(A, c + beta * P @ v - v)
    return v


def _one_hot(policy, n_act):
    acts = policy.p_active.astype(np.int64)
    m = np.zeros((acts.size, n_act))
    m[np.arange(acts.size), acts] = 1.0
    return m


# ---------------------------------------------------------------------------
# structure


@dataclass
class MonotoneReport:
    passed: bool
    direction: str
    slices: dict
    violations: list

    def __str__(self):
        return f"value monotone in b: {self.passed} (direction {self.direction})"


def _slices(table, space):
    return np.asarray(table).reshape(space.num_activities, space.num_charge_states, space.num_levels)


def verify_value_monotone(value: np.ndarray, space, tol: float = STRUCTURE_TOL) -> MonotoneReport:
    """Classify each ``(u, e)`` slice of the value table as monotone up, down, flat or neither."""
    grid = _slices(value, space)
    slices, violations = {}, []
    for u in range(space.num_activities):
        for e in range(space.num_charge_states):
            step = np.diff(grid[u, e])
            up = bool(np.all(step >= -tol))
            down = bool(np.all(step <= tol))
            if up and down:
                kind = "constant"
            elif up:
                kind = "non-decreasing"
            elif down:
                kind = "non-increasing"
            else:
                kind = "non-monotone"
                # report the first step against the slice's dominant trend
                trend = np.sign(grid[u, e, -1] - grid[u, e, 0]) or 1.0
                bad = np.flatnonzero(trend * step < -tol)
                violations.append((u, e, int(bad[0]) + 1))
            slices[(u, e)] = kind
    kinds = set(slices.values()) - {"constant"}
    if "non-monotone" in kinds:
        direction, passed = "non-monotone", False
    elif len(kinds) > 1:
        direction, passed = "mixed", False
    else:
        direction, passed = (kinds.pop() if kinds else "constant"), True
    return MonotoneReport(passed, direction, slices, violations)


@dataclass
class SubmodularReport:
    passed: bool
    comparisons: int
    violations: list
    worst_margin: float

    def __str__(self):
        return (f"Q submodular in (b, action): {self.passed} "
                f"({self.comparisons} comparisons, {len(self.violations)} violations)")


def verify_q_submodular(q: np.ndarray, space, tol: float = STRUCTURE_TOL) -> SubmodularReport:
    """Check the action gap ``Q(b, active) - Q(b, sleep)`` is non-increasing in ``b``.

    ``worst_margin`` is the largest ``gap(b+1) - gap(b)`` seen; positive values are
    increases of the gap.
    """
    gap = _slices(q[:, ACTIVE] - q[:, SLEEP], space)
    inc = np.diff(gap, axis=2)
    bad = np.argwhere(inc > tol)
    violations = [(int(u), int(e), int(b), float(inc[u, e, b])) for u, e, b in bad]
    return SubmodularReport(not violations, int(inc.size), violations, float(inc.max()) if inc.size else 0.0)


@dataclass
class ThresholdTable:
    """One activation level per ``(u, e)``; ``B + 1`` means never active."""

    cuts: np.ndarray
    capacity: int

    def actions(self, space) -> np.ndarray:
        b = np.arange(space.num_levels)
        acts = (b[None, None, :] >= self.cuts[:, :, None]).astype(np.int64)
        return acts.reshape(-1)

    def policy(self, space, name="threshold") -> Policy:
        return Policy.from_actions(self.actions(space), name)

    def rows(self):
        U, E = self.cuts.shape
        return [(u, e, int(self.cuts[u, e])) for u in range(U) for e in range(E)]


def extract_threshold(policy, space, q: np.ndarray | None = None,
                      tie_tol: float = GENUINE_TIE) -> ThresholdTable:
    """Read off per-slice activation levels from a deterministic policy.

    With ``q`` given, states whose action gap is below ``tie_tol`` are treated
    as either-way and do not break monotonicity.
    """
    if isinstance(policy, Policy):
        acts = policy.actions
    else:
        acts = np.asarray(policy, dtype=np.int64)
    grid = _slices(acts, space)
    free = np.zeros_like(grid, dtype=bool)
    if q is not None:
        free = _slices(np.abs(q[:, ACTIVE] - q[:, SLEEP]) < tie_tol, space)
    U, E, L = grid.shape
    cuts = np.full((U, E), L, dtype=np.int64)
    for u in range(U):
        for e in range(E):
            row, loose = grid[u, e], free[u, e]
            # among cuts consistent with every non-tied state, the one that
            # flips the fewest tied states (smallest on ties)
            cut, fewest = None, L + 1
            for c in range(L + 1):
                want = np.arange(L) >= c
                if np.all(loose | (row == want)):
                    flips = int(np.sum(row != want))
                    if flips < fewest:
                        cut, fewest = c, flips
            if cut is None:
                first_on = np.flatnonzero((row == 1) & ~loose)
                start = int(first_on[0]) if first_on.size else 0
                later_off = np.flatnonzero((row[start:] == 0) & ~loose[start:])
                raise NotThreshold(u, e, start + int(later_off[0]) if later_off.size else start)
            cuts[u, e] = cut
    return ThresholdTable(cuts, space.battery_capacity)


def project_threshold(actions, space) -> np.ndarray:
    """Nearest threshold policy in Hamming distance, ties toward the larger cut."""
    grid = _slices(np.asarray(actions, dtype=np.int64), space)
    L = space.num_levels
    cutgrid = np.arange(L + 1)[:, None] <= np.arange(L)[None, :]
    out = np.empty_like(grid)
    for u in range(grid.shape[0]):
        for e in range(grid.shape[1]):
            flips = np.sum(cutgrid != grid[u, e][None, :], axis=1)
            best = np.flatnonzero(flips == flips.min())[-1]
            out[u, e] = cutgrid[best]
    return out.reshape(-1)


def threshold_table_from_actions(actions, space) -> ThresholdTable:
    return extract_threshold(np.asarray(actions, dtype=np.int64), space)
