"""Problem instance for activity sensing under a data budget.

A state is ``(u, e, b)``: user activity, energy-arrival flag and battery level.
States are indexed lexicographically with ``b`` varying fastest, so the flat
index of ``(u, e, b)`` is ``(u * 2 + e) * (B + 1) + b``. Every array in this
package that is keyed by state uses that order.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import IntEnum
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, ModelError

SLEEP = 0
ACTIVE = 1
NUM_ACTIONS = 2

STOCHASTIC_TOL = 1e-12
KERNEL_TOL = 1e-10


class Action(IntEnum):
    SLEEP = 0
    ACTIVE = 1


class State(NamedTuple):
    u: int
    e: int
    b: int


@dataclass(frozen=True)
class StateSpace:
    num_activities: int
    battery_capacity: int
    num_charge_states: int = field(default=2, init=False)

    def __post_init__(self):
        if self.num_activities < 1:
            raise ModelError("num_activities must be positive")
        if self.battery_capacity < 0:
            raise ModelError("battery_capacity must be nonnegative")

    @property
    def num_levels(self) -> int:
        return self.battery_capacity + 1

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.num_activities, 2, self.num_levels)

    @property
    def n_states(self) -> int:
        return self.num_activities * 2 * self.num_levels

    def index(self, u: int, e: int, b: int) -> int:
        if not (0 <= u < self.num_activities and e in (0, 1) and 0 <= b <= self.battery_capacity):
            raise IndexError(f"state ({u}, {e}, {b}) outside the state space")
        return (u * 2 + e) * self.num_levels + b

    def state(self, index: int) -> State:
        if not 0 <= index < self.n_states:
            raise IndexError(f"state index {index} out of range")
        ue, b = divmod(index, self.num_levels)
        u, e = divmod(ue, 2)
        return State(u, e, b)

    def states(self):
        for i in range(self.n_states):
            yield self.state(i)

    @cached_property
    def components(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Arrays ``(u, e, b)`` giving the components of every flat index."""
        u, e, b = np.unravel_index(np.arange(self.n_states), self.shape)
        return u, e, b


def lindley_update(b: int, e: int, delta: int, capacity: int) -> int:
    """Battery level after one epoch: ``min([b - delta]^+ + e, capacity)``."""
    return min(max(b - delta, 0) + e, capacity)


@dataclass(frozen=True, eq=False)
class SensingModel:
    """A fully specified sensing problem.

    Per-(state, action) arrays have shape ``(n_states, 2)``. ``detect_error``
    is the stage cost minimised by every solver; ``data_usage`` is the
    constrained stream.
    """

    space: StateSpace
    user_transition: np.ndarray
    charge_prob: float
    detect_error: np.ndarray
    connectivity: np.ndarray
    data_usage: np.ndarray
    budget: float
    discount: float
    activities: tuple[str, ...] = ()
    params: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        n = self.space.n_states
        U = self.space.num_activities
        for name in ("user_transition", "detect_error", "connectivity", "data_usage"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.user_transition.shape != (U, U):
            raise ModelError(f"user_transition must be {U}x{U}")
        if np.any(self.user_transition < 0) or np.any(
            np.abs(self.user_transition.sum(axis=1) - 1.0) > STOCHASTIC_TOL
        ):
            raise ModelError("user_transition rows must be probability vectors")
        for name in ("detect_error", "connectivity", "data_usage"):
            if getattr(self, name).shape != (n, 2):
                raise ModelError(f"{name} must have shape ({n}, 2)")
        if not 0.0 <= self.charge_prob <= 1.0:
            raise ModelError("charge_prob must lie in [0, 1]")
        if np.any(self.detect_error < 0) or np.any(self.detect_error > 1):
            raise ModelError("detect_error must lie in [0, 1]")
        if np.any(self.detect_error[:, SLEEP] != 1.0):
            raise ModelError("sleep mode must have detection error exactly 1")
        if np.any(self.connectivity < 0) or np.any(self.connectivity > 1):
            raise ModelError("connectivity must lie in [0, 1]")
        if np.any(self.connectivity[:, SLEEP] != 0.0):
            raise ModelError("sleep mode must have zero connectivity")
        if np.any(self.data_usage < 0):
            raise ModelError("data usage must be nonnegative")
        b = self.space.components[2]
        if np.any(self.data_usage[:, SLEEP] != 0.0) or np.any(self.data_usage[b == 0, ACTIVE] != 0.0):
            raise ModelError("data usage must vanish in sleep mode and at an empty battery")
        if not self.budget > 0:
            raise ModelError("data budget must be positive")
        if not 0.0 <= self.discount < 1.0:
            raise ModelError("discount must lie in [0, 1)")

    # the names the solvers use
    @property
    def cost(self) -> np.ndarray:
        return self.detect_error

    @property
    def n_states(self) -> int:
        return self.space.n_states

    @cached_property
    def kernel(self) -> np.ndarray:
        return build_kernel(self)

    def lagrangian_cost(self, lam: float) -> np.ndarray:
        return self.detect_error + lam * self.data_usage

    def with_params(self, **overrides) -> "SensingModel":
        """Rebuild from the stored parameter dict with some entries replaced."""
        if not self.params:
            raise ModelError("model was not built from parameters")
        cfg = dict(self.params)
        cfg.update(overrides)
        return model_from_config(cfg)


@dataclass(frozen=True, eq=False)
class FiniteCMDP:
    """A bare constrained MDP, used for small hand-built and random instances."""

    kernel: np.ndarray
    cost: np.ndarray
    data_usage: np.ndarray
    budget: float
    discount: float = 0.9

    def __post_init__(self):
        k = np.asarray(self.kernel, dtype=float)
        n = k.shape[0]
        if k.shape[2] != n:
            raise ModelError("kernel must be (n, actions, n)")
        if np.any(np.abs(k.sum(axis=2) - 1.0) > KERNEL_TOL) or np.any(k < 0):
            raise ModelError("kernel rows must be probability vectors")
        object.__setattr__(self, "kernel", k)
        object.__setattr__(self, "cost", np.asarray(self.cost, dtype=float))
        object.__setattr__(self, "data_usage", np.asarray(self.data_usage, dtype=float))

    @property
    def n_states(self) -> int:
        return self.kernel.shape[0]

    def lagrangian_cost(self, lam: float) -> np.ndarray:
        return self.cost + lam * self.data_usage


def transition_prob(model: SensingModel, src: State, delta: int, dst: State) -> float:
    """One kernel entry, evaluated directly from the model functions."""
    space = model.space
    s = space.index(*src)
    space.index(*dst)
    pu = model.user_transition[src.u, dst.u]
    pe = model.charge_prob if dst.e == 1 else 1.0 - model.charge_prob
    g = model.connectivity[s, delta]
    cap = space.battery_capacity
    p = 0.0
    if dst.b == lindley_update(src.b, src.e, delta, cap):
        p += g
    if dst.b == lindley_update(src.b, src.e, 0, cap):
        p += 1.0 - g
    return float(pu * pe * p)


def build_kernel(model: SensingModel) -> np.ndarray:
    """Dense transition kernel of shape ``(n, 2, n)``.

    The battery decrements only on the successful-connectivity branch; both
    branches are clamped to ``[0, B]`` and merge when they land on the same
    level.
    """
    space = model.space
    U, _, L = space.shape
    cap = space.battery_capacity
    g = model.connectivity.reshape(U, 2, L, 2)
    battery = np.zeros((U, 2, L, 2, L))
    for e in (0, 1):
        for b in range(L):
            for a in (SLEEP, ACTIVE):
                hit = lindley_update(b, e, a, cap)
                miss = lindley_update(b, e, 0, cap)
                battery[:, e, b, a, hit] += g[:, e, b, a]
                battery[:, e, b, a, miss] += 1.0 - g[:, e, b, a]
    pe = np.array([1.0 - model.charge_prob, model.charge_prob])
    k = np.einsum("uv,f,uebac->uebavfc", model.user_transition, pe, battery)
    k = k.reshape(space.n_states, 2, space.n_states)
    sums = k.sum(axis=2)
    bad = np.argwhere(np.abs(sums - 1.0) > KERNEL_TOL)
    if bad.size:
        s, a = bad[0]
        raise ModelError(
            f"kernel row for state {tuple(space.state(int(s)))}, action {int(a)} sums to {sums[s, a]!r}"
        )
    bad = np.argwhere((k < 0).any(axis=2) | (k > 1).any(axis=2))
    if bad.size:
        s, a = bad[0]
        raise ModelError(
            f"kernel row for state {tuple(space.state(int(s)))}, action {int(a)} has entries outside [0, 1]"
        )
    k.setflags(write=False)
    return k


def sensing_fraction(model: SensingModel) -> float:
    """Fraction of epochs the budget allows to be active: ``D / d(psi, active)``."""
    b = model.space.components[2]
    d = model.data_usage[b > 0, ACTIVE]
    if d.size == 0:
        raise ModelError("no state with a nonempty battery")
    if np.any(d != d[0]):
        raise ModelError("active data usage is not constant across states")
    if d[0] <= 0:
        raise ModelError("active data usage must be positive")
    return float(model.budget / d[0])


# ---------------------------------------------------------------------------
# config files

CONFIG_KEYS = {
    "activities",
    "user_transition",
    "charge_prob",
    "detect_error_active",
    "connectivity_active",
    "battery_capacity",
    "data_budget",
    "discount",
    "data_usage_active",
}
OPTIONAL_KEYS = {"detect_error_empty"}


def _per_activity(cfg, key, U):
    val = cfg[key]
    if isinstance(val, (int, float)) and not isinstance(val, bool):
        return np.full(U, float(val))
    try:
        arr = np.array(val, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{key} must be a number or a list of numbers", key) from None
    if arr.shape != (U,):
        raise ConfigError(f"{key} must have one entry per activity ({U})", key)
    return arr


def _number(cfg, key, kind=float):
    val = cfg[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{key} must be a number", key)
    if kind is int:
        if int(val) != val:
            raise ConfigError(f"{key} must be an integer", key)
        return int(val)
    return float(val)


def validate_config(cfg: dict) -> dict:
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(cfg) - CONFIG_KEYS - OPTIONAL_KEYS)
    if unknown:
        raise ConfigError(f"unknown config key {unknown[0]!r}", unknown[0])
    missing = sorted(CONFIG_KEYS - set(cfg))
    if missing:
        raise ConfigError(f"missing config key {missing[0]!r}", missing[0])
    return cfg


def model_from_config(cfg: dict) -> SensingModel:
    """Build a :class:`SensingModel` from a parsed config dict.

    ``detect_error_empty`` (optional, default 1.0) is the detection error of
    the active action at an empty battery. With no energy the device cannot
    sense or transmit, so by default the active action there behaves exactly
    like sleep. Set it to ``null`` to keep the per-activity error instead.
    """
    validate_config(cfg)
    names = cfg["activities"]
    if isinstance(names, int) and not isinstance(names, bool):
        names = [str(i) for i in range(names)]
    if not isinstance(names, list) or not names:
        raise ConfigError("activities must be a nonempty list of names", "activities")
    U = len(names)
    try:
        P = np.array(cfg["user_transition"], dtype=float)
    except (TypeError, ValueError):
        raise ConfigError("user_transition must be a numeric matrix", "user_transition") from None
    if P.shape != (U, U):
        raise ConfigError(f"user_transition must be {U}x{U}", "user_transition")
    B = _number(cfg, "battery_capacity", int)
    c_act = _per_activity(cfg, "detect_error_active", U)
    g_act = _per_activity(cfg, "connectivity_active", U)
    d_act = _per_activity(cfg, "data_usage_active", U)
    empty = cfg.get("detect_error_empty", 1.0)
    if empty is not None and (isinstance(empty, bool) or not isinstance(empty, (int, float))):
        raise ConfigError("detect_error_empty must be a number or null", "detect_error_empty")

    space = StateSpace(U, B)
    u, _, b = space.components
    n = space.n_states
    cost = np.ones((n, 2))
    cost[:, ACTIVE] = c_act[u]
    conn = np.zeros((n, 2))
    conn[:, ACTIVE] = g_act[u]
    data = np.zeros((n, 2))
    data[:, ACTIVE] = np.where(b > 0, d_act[u], 0.0)
    if empty is not None:
        cost[b == 0, ACTIVE] = float(empty)
        conn[b == 0, ACTIVE] = 0.0
    try:
        return SensingModel(
            space=space,
            user_transition=P,
            charge_prob=_number(cfg, "charge_prob"),
            detect_error=cost,
            connectivity=conn,
            data_usage=data,
            budget=_number(cfg, "data_budget"),
            discount=_number(cfg, "discount"),
            activities=tuple(str(x) for x in names),
            params=dict(cfg),
        )
    except ModelError as exc:
        raise ConfigError(str(exc), _guess_key(str(exc))) from None


def _guess_key(msg):
    for key in sorted(CONFIG_KEYS | OPTIONAL_KEYS, key=len, reverse=True):
        if key in msg:
            return key
    table = {"charge": "charge_prob", "budget": "data_budget", "discount": "discount",
             "detection": "detect_error_active", "connectivity": "connectivity_active"}
    for word, key in table.items():
        if word in msg:
            return key
    return None


def load_config(path) -> dict:
    text = Path(path).read_text()
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return validate_config(cfg)


def load_model(path) -> SensingModel:
    return model_from_config(load_config(path))


def dump_config(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True) + "\n"


def save_model(model: SensingModel, path) -> None:
    if not model.params:
        raise ModelError("only models built from a config can be saved")
    Path(path).write_text(dump_config(model.params))


def default_config() -> dict:
    text = resources.files("actsense").joinpath("data/default_model.json").read_text()
    return validate_config(json.loads(text))


def default_model(**overrides) -> SensingModel:
    cfg = default_config()
    cfg.update(overrides)
    return model_from_config(cfg)


def models_equal(a: SensingModel, b: SensingModel) -> bool:
    """Bit-exact comparison of two models."""
    return (
        a.space == b.space
        and a.activities == b.activities
        and a.charge_prob == b.charge_prob
        and a.budget == b.budget
        and a.discount == b.discount
        and all(
            np.array_equal(getattr(a, k), getattr(b, k))
            for k in ("user_transition", "detect_error", "connectivity", "data_usage")
        )
    )
