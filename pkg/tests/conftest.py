"""Shared fixtures and brute-force oracles for small instances."""
import itertools
import sys

import numpy as np
import pytest
from scipy.sparse.csgraph import connected_components

from actsense.lagrange import estimate_lambda
from actsense.lp import solve_cmdp
from actsense.model import FiniteCMDP, default_config, default_model, model_from_config

# scipy's HiGHS defaults to 1e-7 feasibility; the oracle needs to be tighter
# than the 1e-9 the simplex is held to
HIGHS_TIGHT = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}


def random_cmdp(rng, n, n_act=2, budget=None, sparsity=0.0, discount=0.9):
    """Random finite CMDP; ``sparsity`` zeroes that fraction of kernel entries."""
    k = rng.random((n, n_act, n))
    if sparsity:
        k[rng.random(k.shape) < sparsity] = 0.0
        # keep every row nonempty
        empty = k.sum(axis=2) == 0
        k[empty, rng.integers(n)] = 1.0
    k /= k.sum(axis=2, keepdims=True)
    cost = rng.random((n, n_act))
    data = rng.random((n, n_act))
    if budget is None:
        budget = float(data.max()) + 1.0
    return FiniteCMDP(k, cost, data, budget, discount)


def closed_classes(P):
    support = P > 0
    _, labels = connected_components(support, directed=True, connection="strong")
    out = []
    for c in np.unique(labels):
        members = labels == c
        if not support[np.ix_(members, ~members)].any():
            out.append(np.flatnonzero(members))
    return out


def class_stationary(P, members):
    sub = P[np.ix_(members, members)]
    m = members.size
    A = sub.T - np.eye(m)
    A[-1] = 1.0
    rhs = np.zeros(m)
    rhs[-1] = 1.0
    return np.linalg.solve(A, rhs)


def deterministic_policies(n, n_act=2):
    for acts in itertools.product(range(n_act), repeat=n):
        yield np.array(acts)


def brute_force_average_cost(model, lam=0.0):
    """Smallest long-run average cost over deterministic policies and their closed classes."""
    K = model.kernel
    n = K.shape[0]
    cost = model.cost + lam * model.data_usage
    best = np.inf
    for acts in deterministic_policies(n, K.shape[1]):
        P = K[np.arange(n), acts]
        c = cost[np.arange(n), acts]
        for members in closed_classes(P):
            mu = class_stationary(P, members)
            best = min(best, float(mu @ c[members]))
    return best


def brute_force_discounted(model, lam, beta):
    """Pointwise minimum of ``(I - beta P_pi)^-1 c_pi`` over deterministic policies."""
    K = model.kernel
    n = K.shape[0]
    cost = model.cost + lam * model.data_usage
    best = np.full(n, np.inf)
    for acts in deterministic_policies(n, K.shape[1]):
        P = K[np.arange(n), acts]
        v = np.linalg.solve(np.eye(n) - beta * P, cost[np.arange(n), acts])
        best = np.minimum(best, v)
    return best


def small_config(U=1, B=2, **overrides):
    cfg = {
        "activities": [f"a{i}" for i in range(U)],
        "user_transition": (np.full((U, U), 1.0 / U)).tolist(),
        "charge_prob": 0.3,
        "detect_error_active": [0.2 + 0.1 * i for i in range(U)],
        "connectivity_active": [0.6] * U,
        "battery_capacity": B,
        "data_budget": 0.25,
        "discount": 0.9,
        "data_usage_active": 1.0,
    }
    cfg.update(overrides)
    return cfg


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(scope="session")
def model():
    return default_model()


@pytest.fixture(scope="session")
def config():
    return default_config()


@pytest.fixture(scope="session")
def cmdp_solution(model):
    return solve_cmdp(model)


@pytest.fixture(scope="session")
def lambda_vi(model):
    """Multiplier from the value-iteration backend, the one the mixture uses."""
    return estimate_lambda(model, backend="vi").lambda_star


@pytest.fixture
def small_model():
    return model_from_config(small_config())


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(acceptance.RESULTS):
        terminalreporter.write_line(acceptance.RESULTS[n])
