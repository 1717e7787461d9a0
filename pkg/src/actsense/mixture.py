"""Randomized constrained policy built from two threshold policies at perturbed prices."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dp import VI_TOL, extract_threshold, value_iteration
from .errors import DegenerateMixture
from .lp import StationarySolution
from .policy import Policy
from .sim import evaluate_policy

log = logging.getLogger(__name__)

DELTA_LAMBDA = 0.01


@dataclass
class MixturePolicy:
    """``pi_plus`` (solved at ``lambda_star + delta``) chosen with probability ``gamma``."""

    pi_plus: np.ndarray
    pi_minus: np.ndarray
    gamma: float
    delta_lambda: float
    lambda_star: float
    usage_plus: float
    usage_minus: float
    cuts_plus: np.ndarray
    cuts_minus: np.ndarray
    flags: list = field(default_factory=list)

    @property
    def lambda_plus(self) -> float:
        return self.lambda_star + self.delta_lambda

    @property
    def lambda_minus(self) -> float:
        return max(self.lambda_star - self.delta_lambda, 0.0)

    def policy(self) -> Policy:
        """Per-decision randomization: each epoch picks a component afresh."""
        plus = Policy.from_actions(self.pi_plus)
        minus = Policy.from_actions(self.pi_minus)
        return plus.mix(minus, self.gamma, name="mixture")

    def rows(self):
        """``(u, e, b_cut_minus, b_cut_plus, gamma)`` per slice."""
        U, E = self.cuts_plus.shape
        return [(u, e, int(self.cuts_minus[u, e]), int(self.cuts_plus[u, e]), self.gamma)
                for u in range(U) for e in range(E)]


def mixing_weight(usage_minus: float, usage_plus: float, budget: float):
    """``gamma = (D- - D) / (D- - D+)`` clamped to [0, 1], with flags for the edge cases."""
    flags = []
    if usage_minus <= budget:
        log.warning("budget is slack at the lower price (%.6g <= %.6g); using that policy alone",
                    usage_minus, budget)
        return 0.0, ["slack"]
    if usage_minus == usage_plus:
        raise DegenerateMixture(f"both components use {usage_minus:.6g}; cannot meet the budget")
    gamma = (usage_minus - budget) / (usage_minus - usage_plus)
    if not 0.0 <= gamma <= 1.0:
        log.warning("mixing weight %.6g clamped to [0, 1]", gamma)
        flags.append("clamped")
        gamma = min(max(gamma, 0.0), 1.0)
    return float(gamma), flags


def build_mixture(model, lambda_star: float, delta_lambda: float = DELTA_LAMBDA,
                  beta: float | None = None, tol: float = VI_TOL,
                  clip_at_zero: bool = False) -> MixturePolicy:
    """Solve at ``lambda_star +- delta_lambda`` and pick ``gamma`` to meet the budget.

    With ``clip_at_zero`` the lower price is floored at 0 instead of rejected,
    which covers budgets that are slack at (or near) zero price.
    """
    if not delta_lambda > 0:
        raise ValueError("delta_lambda must be positive")
    lower = lambda_star - delta_lambda
    if lower < 0 and not clip_at_zero:
        raise ValueError("lambda_star - delta_lambda must be nonnegative")
    space = model.space
    prices = {+1: lambda_star + delta_lambda, -1: max(lower, 0.0)}
    comps = {}
    for sign in (+1, -1):
        res = value_iteration(model, prices[sign], beta, tol=tol)
        cuts = extract_threshold(res.actions, space).cuts
        usage = evaluate_policy(model, res.policy).data_usage
        comps[sign] = (res.actions, cuts, usage)
    gamma, flags = mixing_weight(comps[-1][2], comps[+1][2], model.budget)
    if lower < 0:
        flags.append("lower-price-clipped")
    return MixturePolicy(
        pi_plus=comps[+1][0], pi_minus=comps[-1][0], gamma=gamma,
        delta_lambda=delta_lambda, lambda_star=lambda_star,
        usage_plus=comps[+1][2], usage_minus=comps[-1][2],
        cuts_plus=comps[+1][1], cuts_minus=comps[-1][1], flags=flags,
    )


def mixture_as_stationary(model, mixture: MixturePolicy, semantics: str = "per-decision",
                          method: str = "power") -> StationarySolution:
    """Long-run occupation measure of the mixture.

    ``"per-decision"`` evaluates the randomized stationary policy; ``"one-shot"``
    flips one coin at time zero, so the long-run averages are the
    ``gamma``-weighted averages of the two components' measures.
    """
    if semantics == "per-decision":
        return evaluate_policy(model, mixture.policy(), method)
    if semantics == "one-shot":
        plus = evaluate_policy(model, Policy.from_actions(mixture.pi_plus), method).phi
        minus = evaluate_policy(model, Policy.from_actions(mixture.pi_minus), method).phi
        phi = mixture.gamma * plus + (1.0 - mixture.gamma) * minus
        return StationarySolution(phi=phi, objective_value=float(np.sum(phi * model.cost)),
                                  data_usage=float(np.sum(phi * model.data_usage)))
    raise ValueError(f"unknown mixing semantics {semantics!r}")
