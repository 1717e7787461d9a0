import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from actsense.errors import NotErgodic
from actsense.model import ACTIVE, SLEEP, FiniteCMDP, model_from_config, sensing_fraction
from actsense.policy import Policy
from actsense.sim import (
    SensingEnv, all_metrics, avg_battery, chain_stationary, cup_policy, evaluate_policy,
    overflow_probability, overflow_rate, per_activity_error, simulate, stationary_distribution,
    sync_probability,
)

from conftest import small_config


def sleep_all(m):
    return Policy.constant(m.n_states, 0.0)


# --- stationary analysis ----------------------------------------------------

def test_single_state_chain():
    assert chain_stationary(np.ones((1, 1)))[0] == 1.0


@pytest.mark.parametrize("method", ["direct", "power"])
def test_full_charge_fills_battery(method):
    m = model_from_config(small_config(U=2, B=4, charge_prob=1.0))
    phi = stationary_distribution(m, sleep_all(m), method)
    b = m.space.components[2]
    assert phi[b == 4].sum() == pytest.approx(1.0, abs=1e-10)


def test_two_closed_classes_rejected():
    with pytest.raises(NotErgodic):
        chain_stationary(np.eye(2))


def test_power_iteration_budget():
    P = np.array([[0.9, 0.1], [0.5, 0.5]])
    with pytest.raises(NotErgodic):
        chain_stationary(P, "power", max_steps=1)
    mu = chain_stationary(P, "power")
    assert np.allclose(mu, [5 / 6, 1 / 6], atol=1e-10)


def test_transient_states_get_no_mass():
    P = np.array([[0.0, 1.0, 0.0], [0.0, 0.5, 0.5], [0.0, 0.5, 0.5]])
    mu = chain_stationary(P)
    assert mu[0] == 0.0 and mu[1:] == pytest.approx([0.5, 0.5])


@pytest.mark.parametrize("method", ["direct", "power"])
def test_lp_measure_reproduced(model, cmdp_solution, method):
    phi = stationary_distribution(model, cmdp_solution.policy, method)
    assert np.abs(phi - cmdp_solution.phi).max() <= 1e-6


def test_stationary_residual(model):
    pol = Policy(np.random.default_rng(0).random(model.n_states))
    phi = stationary_distribution(model, pol)
    mu = phi.sum(axis=1)
    P = np.einsum("sa,sat->st", pol.matrix(), model.kernel)
    assert np.abs(mu @ P - mu).max() <= 1e-12


# --- metrics ----------------------------------------------------------------

def test_all_sleep_metrics(model):
    phi = evaluate_policy(model, sleep_all(model)).phi
    assert avg_battery(model, phi) == 0.0
    assert sync_probability(model, phi) == 0.0


def test_point_mass_battery(model):
    phi = np.zeros((model.n_states, 2))
    phi[model.space.index(2, 1, 10), ACTIVE] = 1.0
    assert avg_battery(model, phi) == 10.0


def test_sync_extremes():
    m = model_from_config(small_config(U=2, B=3, connectivity_active=0.0))
    phi = evaluate_policy(m, Policy.constant(m.n_states, 1.0)).phi
    assert sync_probability(m, phi) == 0.0
    # keep full connectivity at the empty level so "always active" always syncs
    m = model_from_config(small_config(U=2, B=3, connectivity_active=1.0, detect_error_empty=None))
    phi = evaluate_policy(m, Policy.constant(m.n_states, 1.0)).phi
    assert sync_probability(m, phi) == pytest.approx(1.0, abs=1e-12)


def test_overflow_without_charging():
    m = model_from_config(small_config(U=2, B=3, charge_prob=0.0))
    phi = evaluate_policy(m, Policy.constant(m.n_states, 0.5)).phi
    assert overflow_probability(m, phi) == 0.0
    assert overflow_rate(m, phi) == 0.0


def test_overflow_reduces_for_sleep():
    m = model_from_config(small_config(U=2, B=3, charge_prob=1.0))
    phi = np.random.default_rng(1).random((m.n_states, 2))
    phi[:, ACTIVE] = 0.0
    phi /= phi.sum()
    expected = sum(phi[m.space.index(u, 1, 2), SLEEP] for u in range(2))
    assert overflow_probability(m, phi) == pytest.approx(expected)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 1.0))
def test_metric_bounds(seed, q):
    m = model_from_config(small_config(U=2, B=5, charge_prob=q))
    pol = Policy(np.random.default_rng(seed).random(m.n_states))
    phi = evaluate_policy(m, pol).phi
    active = phi[:, ACTIVE].sum()
    met = all_metrics(m, phi)
    assert -1e-12 <= met["rho"] <= active + 1e-12
    assert -1e-12 <= met["tau"] <= q + 1e-12
    assert -1e-12 <= met["tau_full"] <= q + 1e-12
    assert -1e-12 <= met["b_avg"] <= m.space.battery_capacity * active + 1e-12


def test_per_activity_error(model, cmdp_solution):
    raw, norm = per_activity_error(model, cmdp_solution.phi)
    assert raw.sum() == pytest.approx(cmdp_solution.objective_value, abs=1e-12)
    assert np.all((norm >= 0) & (norm <= 1))
    mu_u = cmdp_solution.phi.sum(axis=1).reshape(6, -1).sum(axis=1)
    assert np.allclose(raw, norm * mu_u)


# --- uniform baseline -------------------------------------------------------

def test_cup_measure(model):
    pol, phi = cup_policy(model)
    xi = sensing_fraction(model)
    assert phi.sum() == pytest.approx(1.0, abs=1e-15)
    assert np.all(pol.p_active == xi)
    levels = model.space.num_levels
    usage = float(np.sum(phi * model.data_usage))
    assert usage == pytest.approx(xi * (levels - 1) / levels, abs=1e-15)
    assert usage <= model.budget


def test_cup_policy_respects_budget(model):
    pol, _ = cup_policy(model)
    assert evaluate_policy(model, pol).data_usage <= model.budget + 1e-12


# --- environment and Monte-Carlo --------------------------------------------

def test_env_branches():
    m = model_from_config(small_config(U=1, B=3, connectivity_active=0.6, charge_prob=0.5))
    env = SensingEnv(m, np.random.default_rng(0), state=(0, 1, 2))
    # connected: drain one, gain one
    cost, data, connected, wasted = env.step(ACTIVE, 0.1, 0.5, 0.9)
    assert connected and (env.b, env.e) == (2, 0) and data == 1.0 and not wasted
    # not connected: battery keeps the level, no arrival this time
    cost, data, connected, wasted = env.step(ACTIVE, 0.9, 0.5, 0.1)
    assert not connected and (env.b, env.e) == (2, 1)
    env.step(SLEEP, 0.0, 0.5, 0.1)
    assert env.b == 3
    # arrival at a full battery is wasted
    *_, wasted = env.step(SLEEP, 0.0, 0.5, 0.1)
    assert wasted and env.b == 3


def test_env_follows_kernel(model):
    """Empirical one-step frequencies from a fixed state match the kernel row."""
    rng = np.random.default_rng(4)
    s0 = model.space.state(model.space.index(2, 1, 7))
    counts = np.zeros(model.n_states)
    n = 40_000
    for r in rng.random((n, 3)):
        env = SensingEnv(model, rng, state=s0)
        env.step(ACTIVE, *r)
        counts[env.state_index] += 1
    p = model.kernel[model.space.index(*s0), ACTIVE]
    se = np.sqrt(p * (1 - p) / n) + 1e-12
    assert np.all(np.abs(counts / n - p) <= 5 * se)


def test_seed_repeatability(small_model):
    pol = Policy.constant(small_model.n_states, 0.3)
    a = simulate(small_model, pol, 5000, seed=3)
    b = simulate(small_model, pol, 5000, seed=3)
    assert a == b
    assert simulate(small_model, pol, 5000, seed=4) != a


def test_all_sleep_simulation(model):
    st_ = simulate(model, sleep_all(model), 20_000, seed=1)
    assert st_.detection_error == 1.0 and st_.data_usage == 0.0
    assert st_.sync_rate == 0.0 and st_.avg_battery == 0.0


def test_rejects_empty_run(small_model):
    with pytest.raises(ValueError):
        simulate(small_model, sleep_all(small_model), 0, seed=1)


def test_optimal_policy_monte_carlo(model, cmdp_solution):
    st_ = simulate(model, cmdp_solution.policy, 300_000, seed=42)
    assert abs(st_.detection_error - cmdp_solution.objective_value) <= 3 * st_.detection_error_se
    assert abs(st_.data_usage - cmdp_solution.data_usage) <= 3 * st_.data_usage_se
    for name in ("detection_error", "data_usage", "sync_rate", "overflow", "overflow_full"):
        assert 0.0 <= getattr(st_, name) <= 1.0
    assert 0.0 <= st_.avg_battery <= model.space.battery_capacity
    assert st_.prng == "numpy.random.PCG64"


def test_small_instance_monte_carlo():
    m = model_from_config(small_config(U=2, B=3, charge_prob=0.4))
    pol = Policy(np.random.default_rng(2).random(m.n_states))
    exact = all_metrics(m, evaluate_policy(m, pol).phi)
    st_ = simulate(m, pol, 200_000, seed=9)
    for key, attr in (("J", "detection_error"), ("D", "data_usage"), ("b_avg", "avg_battery"),
                      ("rho", "sync_rate"), ("tau", "overflow"), ("tau_full", "overflow_full")):
        assert abs(getattr(st_, attr) - exact[key]) <= 4 * getattr(st_, attr + "_se"), key


def test_finite_cmdp_stationary():
    K = np.array([[[0.5, 0.5], [1.0, 0.0]], [[0.2, 0.8], [0.6, 0.4]]])
    m = FiniteCMDP(K, [[1.0, 0.2], [1.0, 0.3]], [[0.0, 1.0], [0.0, 1.0]], budget=1.0)
    pol = Policy(np.array([0.0, 1.0]))
    phi = stationary_distribution(m, pol)
    # states 0 -> {0,1} evenly, 1 -> 0 w.p. 0.6
    mu0 = 0.6 / 1.1
    assert phi[0, SLEEP] == pytest.approx(mu0) and phi[1, ACTIVE] == pytest.approx(1 - mu0)
