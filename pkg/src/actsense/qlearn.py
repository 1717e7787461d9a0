"""Tabular Q-learning on the simulated sensing chain, plain and structure-aware."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .dp import GENUINE_TIE, greedy_actions, project_threshold, value_iteration
from .model import ACTIVE, SLEEP
from .sim import SensingEnv

EPS_START = 0.5
EPS_END = 0.05
EPS_DECAY_FRACTION = 0.5
KAPPA = 0.01
CHECKPOINTS = 100


@dataclass(frozen=True)
class LearnerConfig:
    lam: float
    beta: float | None = None
    max_iters: int = 100_000
    seed: int = 0
    mode: str = "conventional"
    eps_start: float = EPS_START
    eps_end: float = EPS_END
    eps_decay_fraction: float = EPS_DECAY_FRACTION
    kappa: float = KAPPA
    init: str = "tilted"
    per_pair_steps: bool = False
    project_at_checkpoints: bool = False
    checkpoints: int = CHECKPOINTS

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.mode not in ("conventional", "structured"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.init not in ("tilted", "flat"):
            raise ValueError(f"unknown initialization {self.init!r}")
        for name in ("eps_start", "eps_end", "eps_decay_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")

    def exploration(self, i: int) -> float:
        """Linear decay from ``eps_start`` to ``eps_end`` over the first part of the run."""
        horizon = self.eps_decay_fraction * self.max_iters
        if horizon <= 0 or i >= horizon:
            return self.eps_end
        return self.eps_start + (self.eps_end - self.eps_start) * i / horizon


@dataclass
class LearningRun:
    q: np.ndarray
    actions: np.ndarray
    raw_actions: np.ndarray
    steps: list = field(default_factory=list)
    mismatch: list = field(default_factory=list)
    mismatch_raw: list = field(default_factory=list)
    env_steps: int = 0
    mode: str = "conventional"
    seed: int = 0

    @property
    def final_mismatch(self) -> float:
        return self.mismatch[-1] if self.mismatch else float("nan")


def q_update(q: np.ndarray, s: int, a: int, cost: float, s_next: int, i: int, beta: float) -> np.ndarray:
    """One temporal-difference step with step size ``1 / sqrt(i + 1)``, in place."""
    target = cost + beta * q[s_next].min()
    q[s, a] += (target - q[s, a]) / math.sqrt(i + 1)
    return q


def initial_q(model, cfg: LearnerConfig) -> np.ndarray:
    """Zero table for the plain learner; a table strictly increasing in ``b`` otherwise.

    ``init="flat"`` uses ``kappa * b`` for both actions. ``init="tilted"`` uses
    ``kappa * b`` for sleep and ``kappa * (b + B/2) / 2`` for active, still
    increasing in ``b`` but with an action gap that shrinks as the battery
    fills, so the starting greedy policy activates above half capacity.
    """
    n = model.n_states
    if cfg.mode == "conventional":
        return np.zeros((n, 2))
    b = model.space.components[2].astype(float)
    B = model.space.battery_capacity
    q = np.empty((n, 2))
    q[:, SLEEP] = cfg.kappa * b
    if cfg.init == "flat":
        q[:, ACTIVE] = cfg.kappa * b
    else:
        q[:, ACTIVE] = cfg.kappa * (b + B / 2.0) / 2.0
    return q


@dataclass
class Reference:
    """Optimal actions at the learner's price and the states whose choice matters."""

    actions: np.ndarray
    decided: np.ndarray

    @classmethod
    def from_model(cls, model, lam, beta=None, tie=GENUINE_TIE):
        res = value_iteration(model, lam, beta)
        return cls(res.actions, np.abs(res.gap) >= tie)

    def mismatch(self, actions) -> float:
        if not self.decided.any():
            return 0.0
        return float(np.mean(actions[self.decided] != self.actions[self.decided]))


def _learn(model, cfg: LearnerConfig, reference: Reference | None) -> LearningRun:
    beta = model.discount if cfg.beta is None else cfg.beta
    if reference is None:
        reference = Reference.from_model(model, cfg.lam, beta)
    space = model.space
    structured = cfg.mode == "structured"
    q_arr = initial_q(model, cfg)
    q = q_arr.tolist()
    cost = model.lagrangian_cost(cfg.lam).tolist()
    visits = [[0, 0] for _ in range(model.n_states)]

    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    env = SensingEnv(model, rng)
    L = cfg.max_iters
    every = max(1, L // cfg.checkpoints)
    run = LearningRun(q=q_arr, actions=None, raw_actions=None, mode=cfg.mode, seed=cfg.seed)

    def snapshot(step):
        arr = np.array(q)
        raw = greedy_actions(arr)
        acts = project_threshold(raw, space) if structured else raw
        run.steps.append(step)
        run.mismatch.append(reference.mismatch(acts))
        run.mismatch_raw.append(reference.mismatch(raw))
        return arr, raw, acts

    chunk = 65_536
    for start in range(0, L, chunk):
        draws = rng.random((min(chunk, L - start), 5))
        for k, (r_eps, r_pick, r_conn, r_user, r_charge) in enumerate(draws.tolist()):
            i = start + k
            s = env.state_index
            qs = q[s]
            if r_eps < cfg.exploration(i):
                a = ACTIVE if r_pick < 0.5 else SLEEP
            else:
                a = ACTIVE if qs[ACTIVE] < qs[SLEEP] - 1e-12 else SLEEP
            env.step(a, r_conn, r_user, r_charge)
            s2 = env.state_index
            qn = q[s2]
            target = cost[s][a] + beta * (qn[0] if qn[0] <= qn[1] else qn[1])
            if cfg.per_pair_steps:
                n_sa = visits[s][a]
                visits[s][a] = n_sa + 1
                qs[a] += (target - qs[a]) / math.sqrt(n_sa + 1)
            else:
                qs[a] += (target - qs[a]) / math.sqrt(i + 1)
            if (i + 1) % every == 0 or i + 1 == L:
                arr, raw, acts = snapshot(i + 1)
                if structured and cfg.project_at_checkpoints:
                    # extension: pull the table toward the projected policy by
                    # swapping the two entries wherever projection flips the action
                    for st in np.flatnonzero(acts != raw):
                        q[st][0], q[st][1] = q[st][1], q[st][0]
    arr = np.array(q)
    raw = greedy_actions(arr)
    run.q = arr
    run.raw_actions = raw
    run.actions = project_threshold(raw, space) if structured else raw
    run.env_steps = L
    return run


def run_conventional(model, cfg: LearnerConfig, reference: Reference | None = None) -> LearningRun:
    return _learn(model, replace(cfg, mode="conventional"), reference)


def run_structured(model, cfg: LearnerConfig, reference: Reference | None = None) -> LearningRun:
    return _learn(model, replace(cfg, mode="structured"), reference)


def run_pair(model, cfg: LearnerConfig, reference: Reference | None = None):
    """Both learners on the same seed, so they see the same random stream."""
    if reference is None:
        beta = model.discount if cfg.beta is None else cfg.beta
        reference = Reference.from_model(model, cfg.lam, beta)
    return run_conventional(model, cfg, reference), run_structured(model, cfg, reference)
