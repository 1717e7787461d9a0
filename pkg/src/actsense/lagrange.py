"""Stochastic-approximation search for the data-price multiplier."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NoFeasibleLambda, NotConverged
from .lp import solve_lagrangian

LAMBDA0 = 0.1
EPSILON = 1e-4
MAX_ITERS = 500
FEAS_SLACK = 1e-9
MONOTONE_TOL = 1e-6


class UsageOracle:
    """``lam -> D(lam)``: long-run data usage of the unconstrained optimum at price ``lam``.

    ``backend="lp"`` solves the average-cost Lagrangian LP, warm-started from
    the previous optimal basis; ``backend="vi"`` runs discounted value
    iteration (started from the previous value table) and evaluates the
    greedy policy's stationary usage.
    """

    def __init__(self, model, backend: str = "lp", tol: float = 1e-8):
        if backend not in ("lp", "vi"):
            raise ValueError(f"unknown backend {backend!r}")
        self.model = model
        self.backend = backend
        self._basis = None
        self._value = None
        self.tol = tol

    def __call__(self, lam: float) -> float:
        if self.backend == "lp":
            sol = solve_lagrangian(self.model, lam, warm_start=self._basis)
            self._basis = sol.warm_start
            return sol.data_usage
        from .dp import value_iteration
        from .sim import evaluate_policy
        res = value_iteration(self.model, lam, tol=self.tol, v0=self._value)
        self._value = res.value
        return evaluate_policy(self.model, res.policy).data_usage


def data_usage_at(model, lam: float, backend: str = "lp") -> float:
    return UsageOracle(model, backend)(lam)


@dataclass
class LagrangeTrace:
    iterations: list = field(default_factory=list)
    lambda_star: float = float("nan")
    converged: bool = False
    epsilon: float = EPSILON
    backend: str = "lp"
    budget: float = float("nan")

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([lam for lam, _ in self.iterations])

    @property
    def usages(self) -> np.ndarray:
        return np.array([d for _, d in self.iterations])

    def rows(self):
        """``(iter, lambda, data_usage, delta_lambda)``; the last row has no successor."""
        out = []
        for i, (lam, d) in enumerate(self.iterations):
            nxt = self.iterations[i + 1][0] if i + 1 < len(self.iterations) else float("nan")
            out.append((i, lam, d, nxt - lam))
        return out


def estimate_lambda(model, lambda0: float = LAMBDA0, epsilon: float = EPSILON,
                    max_iters: int = MAX_ITERS, backend: str = "lp",
                    usage=None, vi_tol: float = 1e-8) -> LagrangeTrace:
    """Robbins-Monro iteration ``lam <- max(0, lam + (D(lam) - D) / sqrt(i + 1))``.

    Stops once a step moves ``lam`` by less than ``epsilon``. The returned
    multiplier is the smallest recorded ``lam`` whose policy meets the budget.
    ``usage`` overrides the inner solver (a callable of ``lam``).
    """
    if not lambda0 > 0:
        raise ValueError("lambda0 must be positive")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    f = usage if usage is not None else UsageOracle(model, backend, vi_tol)
    budget = model.budget
    trace = LagrangeTrace(epsilon=epsilon, backend=backend if usage is None else "custom",
                          budget=budget)
    lam = float(lambda0)
    d = f(lam)
    seen_feasible = False
    for i in range(max_iters):
        trace.iterations.append((lam, d))
        seen_feasible |= d <= budget + FEAS_SLACK
        nxt = max(0.0, lam + (d - budget) / math.sqrt(i + 1))
        d_nxt = f(nxt)
        # a small step only ends the search once some recorded multiplier is
        # feasible; D(lam) is piecewise constant and can approach the budget
        # from above, so the update keeps creeping upward until it crosses
        if abs(nxt - lam) < epsilon and (seen_feasible or d_nxt <= budget + FEAS_SLACK):
            trace.iterations.append((nxt, d_nxt))
            trace.converged = True
            break
        lam, d = nxt, d_nxt
    feasible = [lam for lam, d in trace.iterations if d <= budget + FEAS_SLACK]
    if not feasible:
        raise NoFeasibleLambda("no recorded multiplier meets the data budget", trace=trace)
    trace.lambda_star = min(feasible)
    if not trace.converged:
        last = trace.iterations[-1][0]
        raise NotConverged(f"multiplier search did not settle in {max_iters} iterations "
                           f"(last lambda {last:.6g})", trace=trace)
    return trace


@dataclass
class LambdaCheck:
    grid: np.ndarray
    usages: np.ndarray
    monotone: bool
    violations: list
    smallest_feasible: float
    within_resolution: bool

    def __str__(self):
        return (f"usage non-increasing on grid: {self.monotone}; "
                f"smallest feasible grid lambda {self.smallest_feasible:.6g}")


def lambda_optimality_check(model, lambda_star: float, grid_width: float | None = None,
                            grid_points: int = 11, backend: str = "lp",
                            tol: float = MONOTONE_TOL, usage=None, vi_tol: float = 1e-8) -> LambdaCheck:
    """Sample ``D(lam)`` on ``[lambda_star - w, lambda_star + w]`` (clipped at 0).

    The default width ``lambda_star`` gives the grid ``[0, 2 lambda_star]``.
    """
    f = usage if usage is not None else UsageOracle(model, backend, vi_tol)
    w = lambda_star if grid_width is None else grid_width
    grid = np.linspace(max(0.0, lambda_star - w), lambda_star + w, grid_points)
    usages = np.array([f(lam) for lam in grid])
    inc = np.diff(usages)
    violations = [(float(grid[i]), float(grid[i + 1]), float(inc[i])) for i in np.flatnonzero(inc > tol)]
    feasible = grid[usages <= model.budget + FEAS_SLACK]
    smallest = float(feasible.min()) if feasible.size else float("nan")
    step = grid[1] - grid[0] if grid.size > 1 else 0.0
    within = bool(feasible.size) and abs(lambda_star - smallest) <= step + tol
    return LambdaCheck(grid, usages, not violations, violations, smallest, within)
