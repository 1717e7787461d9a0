"""Exact stationary evaluation and Monte-Carlo simulation of stationary policies."""
from __future__ import annotations

import bisect
from dataclasses import dataclass, asdict

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import NotErgodic
from .lp import StationarySolution
from .model import ACTIVE, SLEEP, sensing_fraction
from .policy import Policy, induced_chain

STATIONARY_TOL = 1e-12
MAX_POWER_STEPS = 100_000
WARMUP_EPOCHS = 10_000
PRNG_NAME = "numpy.random.PCG64"


def _closed_classes(P):
    support = P > 0
    n_comp, labels = connected_components(support, directed=True, connection="strong")
    closed = []
    for c in range(n_comp):
        members = labels == c
        if not support[np.ix_(members, ~members)].any():
            closed.append(np.flatnonzero(members))
    return closed


def chain_stationary(P: np.ndarray, method: str = "direct", tol: float = STATIONARY_TOL,
                     max_steps: int = MAX_POWER_STEPS) -> np.ndarray:
    """Stationary distribution of a finite chain with a single closed class."""
    n = P.shape[0]
    if method == "power":
        mu = np.full(n, 1.0 / n)
        lazy = 0.5 * (P + np.eye(n))
        for _ in range(max_steps):
            nxt = mu @ lazy
            if np.abs(nxt - mu).sum() <= tol:
                return nxt / nxt.sum()
            mu = nxt
        raise NotErgodic(f"power iteration did not settle within {max_steps} steps")
    if method != "direct":
        raise ValueError(f"unknown method {method!r}")
    closed = _closed_classes(P)
    if len(closed) != 1:
        raise NotErgodic(f"induced chain has {len(closed)} closed classes")
    idx = closed[0]
    sub = P[np.ix_(idx, idx)]
    m = idx.size
    A = sub.T - np.eye(m)
    A[-1, :] = 1.0
    rhs = np.zeros(m)
    rhs[-1] = 1.0
    x = np.linalg.solve(A, rhs)
    mu = np.zeros(n)
    mu[idx] = np.clip(x, 0.0, None)
    mu /= mu.sum()
    # a couple of polishing steps; the chain maps the closed class to itself
    for _ in range(3):
        if np.abs(mu @ P - mu).max() <= tol:
            break
        mu = mu @ P
    return mu


def stationary_distribution(model, policy: Policy, method: str = "direct") -> np.ndarray:
    """Occupation measure ``phi(s, a) = mu(s) * pi(a | s)`` under ``policy``."""
    P = induced_chain(model.kernel, policy)
    mu = chain_stationary(P, method=method)
    return mu[:, None] * policy.matrix()


def evaluate_policy(model, policy: Policy, method: str = "direct") -> StationarySolution:
    phi = stationary_distribution(model, policy, method)
    return StationarySolution(
        phi=phi,
        objective_value=float(np.sum(phi * model.cost)),
        data_usage=float(np.sum(phi * model.data_usage)),
    )


# ---------------------------------------------------------------------------
# metrics, evaluated exactly as the occupation-measure sums they are defined by


def detection_error(model, phi) -> float:
    return float(np.sum(phi * model.cost))


def data_usage(model, phi) -> float:
    return float(np.sum(phi * model.data_usage))


def avg_battery(model, phi) -> float:
    """``sum b * phi(s, active)``; not normalised by the activation probability."""
    b = model.space.components[2]
    return float(np.sum(b * phi[:, ACTIVE]))


def avg_battery_when_active(model, phi) -> float:
    active = phi[:, ACTIVE].sum()
    return avg_battery(model, phi) / active if active > 0 else 0.0


def sync_probability(model, phi) -> float:
    return float(np.sum(model.connectivity[:, ACTIVE] * phi[:, ACTIVE]))


def overflow_probability(model, phi) -> float:
    """Mass on ``(u, 1, B-1)`` that either sleeps or fails to connect."""
    space = model.space
    B = space.battery_capacity
    if B < 1:
        return 0.0
    total = 0.0
    for u in range(space.num_activities):
        s = space.index(u, 1, B - 1)
        g = model.connectivity[s, ACTIVE]
        total += phi[s, ACTIVE] * (1.0 - g) + phi[s, SLEEP]
    return float(total)


def overflow_weights(model) -> np.ndarray:
    """Per-(state, action) probability that the next energy arrival is wasted.

    Only a charging epoch at a full battery wastes energy, and then only if
    the battery is not drained by a successful transmission first.
    """
    w = np.zeros((model.n_states, 2))
    u, e, b = model.space.components
    full = (e == 1) & (b == model.space.battery_capacity)
    w[full, SLEEP] = 1.0
    w[full, ACTIVE] = 1.0 - model.connectivity[full, ACTIVE]
    if model.space.battery_capacity == 0:
        w[full, ACTIVE] = 1.0
    return w


def overflow_rate(model, phi) -> float:
    """Probability that an arriving energy unit finds the battery already full."""
    return float(np.sum(overflow_weights(model) * phi))


def per_activity_error(model, phi):
    """Detection error restricted to each activity: raw mass and normalised by mu(u)."""
    u = model.space.components[0]
    U = model.space.num_activities
    raw = np.bincount(u, weights=np.sum(phi * model.cost, axis=1), minlength=U)
    mass = np.bincount(u, weights=phi.sum(axis=1), minlength=U)
    norm = np.divide(raw, mass, out=np.zeros(U), where=mass > 0)
    return raw, norm


def all_metrics(model, phi) -> dict:
    return {
        "J": detection_error(model, phi),
        "D": data_usage(model, phi),
        "b_avg": avg_battery(model, phi),
        "b_avg_active": avg_battery_when_active(model, phi),
        "rho": sync_probability(model, phi),
        "tau": overflow_probability(model, phi),
        "tau_full": overflow_rate(model, phi),
    }


def cup_policy(model):
    """Constrained uniform baseline: active with probability ``xi`` everywhere.

    Returns the policy and the nominal uniform occupation measure, which puts
    ``(1 - xi) / N`` on sleep and ``xi / N`` on active in each of the ``N``
    states.
    """
    xi = sensing_fraction(model)
    if xi > 1:
        xi = 1.0
    n = model.n_states
    phi = np.empty((n, 2))
    phi[:, SLEEP] = (1.0 - xi) / n
    phi[:, ACTIVE] = xi / n
    return Policy.constant(n, xi, name="cup"), phi


# ---------------------------------------------------------------------------
# Monte-Carlo


@dataclass
class TrajectoryStats:
    epochs: int
    seed: int
    detection_error: float
    detection_error_se: float
    data_usage: float
    data_usage_se: float
    avg_battery: float
    avg_battery_se: float
    sync_rate: float
    sync_rate_se: float
    overflow: float
    overflow_se: float
    overflow_full: float
    overflow_full_se: float
    prng: str = PRNG_NAME

    def as_dict(self):
        return asdict(self)


class SensingEnv:
    """Sample-path simulator of the sensing chain.

    Each step draws connectivity, the next activity and the next energy
    arrival, then moves the battery along the branch the draw selects.
    """

    def __init__(self, model, rng: np.random.Generator, state=(0, 0, 0)):
        self.model = model
        self.rng = rng
        self.space = model.space
        self.cum_user = [list(np.cumsum(row)) for row in model.user_transition]
        for row in self.cum_user:
            row[-1] = 1.0
        self.conn = model.connectivity.tolist()
        self.cost = model.cost.tolist()
        self.data = model.data_usage.tolist()
        self.q = float(model.charge_prob)
        self.u, self.e, self.b = state
        self.L = self.space.num_levels
        self.cap = self.space.battery_capacity

    @property
    def state_index(self) -> int:
        return (self.u * 2 + self.e) * self.L + self.b

    def step(self, action: int, r_conn: float, r_user: float, r_charge: float):
        """Advance one epoch with externally supplied uniforms.

        Returns ``(cost, data, connected, wasted_energy)``.
        """
        s = self.state_index
        connected = r_conn < self.conn[s][action]
        drain = action if connected else 0
        level = max(self.b - drain, 0)
        wasted = self.e == 1 and level + 1 > self.cap
        self.b = min(level + self.e, self.cap)
        self.u = bisect.bisect_right(self.cum_user[self.u], r_user)
        if self.u >= len(self.cum_user):
            self.u = len(self.cum_user) - 1
        self.e = 1 if r_charge < self.q else 0
        return self.cost[s][action], self.data[s][action], connected, wasted


def _batch_se(x: np.ndarray, batches: int) -> float:
    if x.size < 2 * batches:
        batches = max(2, x.size // 2)
    usable = x[: (x.size // batches) * batches]
    means = usable.reshape(batches, -1).mean(axis=1)
    return float(means.std(ddof=1) / np.sqrt(batches))


def simulate(model, policy: Policy, epochs: int, seed: int, warmup: int = WARMUP_EPOCHS,
             batches: int = 100, initial_state=(0, 0, 0)) -> TrajectoryStats:
    """Run one trajectory and estimate every metric with batch-means standard errors."""
    if epochs < 1:
        raise ValueError("epochs must be positive")
    rng = np.random.Generator(np.random.PCG64(seed))
    env = SensingEnv(model, rng, initial_state)
    total = warmup + epochs
    draws = rng.random((total, 4))
    p_active = policy.p_active.tolist()
    B = model.space.battery_capacity
    cost = np.empty(epochs)
    data = np.empty(epochs)
    batt = np.empty(epochs)
    sync = np.empty(epochs)
    over = np.empty(epochs)
    full = np.empty(epochs)
    for t in range(total):
        r_act, r_conn, r_user, r_charge = draws[t]
        s = env.state_index
        b, e = env.b, env.e
        action = ACTIVE if r_act < p_active[s] else SLEEP
        c, d, connected, wasted = env.step(action, r_conn, r_user, r_charge)
        if t < warmup:
            continue
        i = t - warmup
        cost[i] = c
        data[i] = d
        batt[i] = b if action == ACTIVE else 0.0
        sync[i] = 1.0 if (action == ACTIVE and connected) else 0.0
        over[i] = 1.0 if (e == 1 and b == B - 1 and not (action == ACTIVE and connected)) else 0.0
        full[i] = 1.0 if wasted else 0.0
    stats = {}
    for name, arr in (("detection_error", cost), ("data_usage", data), ("avg_battery", batt),
                      ("sync_rate", sync), ("overflow", over), ("overflow_full", full)):
        stats[name] = float(arr.mean())
        stats[name + "_se"] = _batch_se(arr, batches)
    return TrajectoryStats(epochs=epochs, seed=seed, **stats)
