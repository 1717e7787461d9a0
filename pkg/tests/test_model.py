import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from actsense.errors import ConfigError, ModelError
from actsense.model import (
    ACTIVE, SLEEP, State, StateSpace, build_kernel, default_config, lindley_update, load_model,
    model_from_config, models_equal, save_model, sensing_fraction, transition_prob,
)
from actsense.policy import Policy
from actsense.sim import evaluate_policy

from conftest import small_config


# --- battery update ---------------------------------------------------------

@pytest.mark.parametrize("b,e,delta,cap,expected", [
    (5, 1, 1, 20, 5),
    (0, 0, 1, 20, 0),
    (20, 1, 0, 20, 20),
    (3, 0, 1, 20, 2),
    (19, 1, 0, 20, 20),
])
def test_lindley_examples(b, e, delta, cap, expected):
    assert lindley_update(b, e, delta, cap) == expected


@given(st.integers(0, 30), st.integers(0, 1), st.integers(0, 1), st.integers(0, 30))
def test_lindley_stays_in_range(b, e, delta, cap):
    b = min(b, cap)
    nxt = lindley_update(b, e, delta, cap)
    assert 0 <= nxt <= cap
    assert abs(nxt - b) <= 1


# --- state space ------------------------------------------------------------

@given(st.integers(1, 7), st.integers(0, 25))
def test_state_index_round_trip(U, B):
    space = StateSpace(U, B)
    assert space.n_states == U * 2 * (B + 1)
    for i in range(space.n_states):
        assert space.index(*space.state(i)) == i


def test_b_varies_fastest():
    space = StateSpace(6, 20)
    assert space.index(0, 0, 1) == 1
    assert space.index(0, 1, 0) == 21
    assert space.index(1, 0, 0) == 42
    u, e, b = space.components
    assert (u[43], e[43], b[43]) == (1, 0, 1)


def test_index_rejects_out_of_range():
    space = StateSpace(2, 3)
    with pytest.raises(IndexError):
        space.index(2, 0, 0)
    with pytest.raises(IndexError):
        space.index(0, 0, 4)


# --- kernel -----------------------------------------------------------------

def test_default_kernel_shape_and_rows(model):
    K = model.kernel
    assert K.shape == (252, 2, 252)
    assert np.all(K >= 0) and np.all(K <= 1)
    assert np.abs(K.sum(axis=2) - 1).max() <= 1e-10


def test_smallest_instance():
    m = model_from_config(small_config(U=1, B=0))
    assert m.kernel.shape == (2, 2, 2)
    assert np.allclose(m.kernel.sum(axis=2), 1.0)


def test_sleep_row_goes_to_charged_level(model):
    space = model.space
    for src in [State(0, 1, 10), State(3, 0, 0), State(5, 1, 20)]:
        s = space.index(*src)
        row = model.kernel[s, SLEEP]
        assert row.sum() == pytest.approx(1.0, abs=1e-12)
        target = lindley_update(src.b, src.e, 0, space.battery_capacity)
        levels = space.components[2][row > 0]
        assert set(levels) == {target}


def test_deterministic_kernel():
    cfg = small_config(U=1, B=3, charge_prob=0.0, connectivity_active=1.0)
    m = model_from_config(cfg)
    space = m.space
    for b in range(1, 4):
        row = m.kernel[space.index(0, 0, b), ACTIVE]
        assert row[space.index(0, 0, b - 1)] == 1.0


def test_transition_prob_enumeration(model):
    space = model.space
    src = State(0, 1, 10)
    total = sum(transition_prob(model, src, ACTIVE, dst) for dst in space.states())
    assert total == pytest.approx(1.0, abs=1e-12)


def test_transition_prob_matches_kernel(model):
    space = model.space
    rng = np.random.default_rng(3)
    for _ in range(200):
        s, t = rng.integers(space.n_states, size=2)
        a = int(rng.integers(2))
        p = transition_prob(model, space.state(int(s)), a, space.state(int(t)))
        assert p == pytest.approx(model.kernel[s, a, t], abs=1e-15)


def test_full_charge_puts_mass_on_charged_slices():
    m = model_from_config(small_config(U=2, B=3, charge_prob=1.0))
    e = m.space.components[1]
    assert np.all(m.kernel[:, :, e == 0] == 0)


def test_battery_moves_by_lindley_branches(model):
    space = model.space
    u, e, b = space.components
    cap = space.battery_capacity
    for s in range(space.n_states):
        for a in (SLEEP, ACTIVE):
            reach = set(b[model.kernel[s, a] > 0])
            allowed = {lindley_update(b[s], e[s], a, cap), lindley_update(b[s], e[s], 0, cap)}
            assert reach <= allowed


def test_all_sleep_uses_no_data(model):
    sol = evaluate_policy(model, Policy.constant(model.n_states, 0.0))
    assert sol.data_usage == 0.0
    assert sol.objective_value == pytest.approx(1.0, abs=1e-12)


def test_bad_kernel_row_reports_location():
    m = model_from_config(small_config(U=1, B=2))
    object.__setattr__(m, "connectivity", np.full_like(m.connectivity, 1.5))
    with pytest.raises(ModelError, match=r"state \(0, 0, 1\), action 1 has entries outside"):
        build_kernel(m)


def test_leaky_kernel_row_reports_location():
    m = model_from_config(small_config(U=2, B=2))
    object.__setattr__(m, "user_transition", np.array([[0.5, 0.5], [0.5, 0.4]]))
    with pytest.raises(ModelError, match=r"state \(1, 0, 0\), action 0 sums to"):
        build_kernel(m)


# --- model invariants and config ------------------------------------------

def test_default_instance_values(model):
    space = model.space
    assert (space.num_activities, space.battery_capacity) == (6, 20)
    assert model.charge_prob == 0.15 and model.budget == 0.25 and model.discount == 0.99
    s = space.index(2, 0, 5)
    assert model.detect_error[s, ACTIVE] == 0.18
    assert model.connectivity[s, ACTIVE] == 0.60
    assert np.all(model.detect_error[:, SLEEP] == 1.0)
    assert np.all(model.connectivity[:, SLEEP] == 0.0)
    b = space.components[2]
    assert np.all(model.data_usage[b == 0] == 0.0)
    assert np.allclose(model.user_transition.sum(axis=1), 1.0, atol=1e-12)


def test_empty_battery_sensing_option():
    m = model_from_config(small_config(U=2, B=3, detect_error_empty=None))
    s = m.space.index(1, 0, 0)
    assert m.detect_error[s, ACTIVE] == pytest.approx(0.3)
    m = model_from_config(small_config(U=2, B=3))
    assert m.detect_error[s, ACTIVE] == 1.0 and m.connectivity[s, ACTIVE] == 0.0


@pytest.mark.parametrize("d,D,xi", [(1.0, 0.25, 0.25), (1.0, 1.0, 1.0), (2.0, 0.5, 0.25)])
def test_sensing_fraction(d, D, xi):
    m = model_from_config(small_config(U=2, B=3, data_usage_active=d, data_budget=D))
    assert sensing_fraction(m) == pytest.approx(xi)


def test_sensing_fraction_rejects_uneven_usage():
    m = model_from_config(small_config(U=2, B=3, data_usage_active=[1.0, 2.0]))
    with pytest.raises(ModelError):
        sensing_fraction(m)


@pytest.mark.parametrize("key,value", [
    ("charge_prob", 1.5),
    ("discount", 1.0),
    ("data_budget", 0.0),
    ("detect_error_active", [0.2, 0.3]),
    ("battery_capacity", 2.5),
    ("user_transition", [[0.5, 0.4]]),
])
def test_bad_config_names_key(key, value):
    with pytest.raises(ConfigError) as info:
        model_from_config(small_config(U=1, B=2, **{key: value}))
    assert info.value.key == key


def test_unknown_key_rejected():
    cfg = small_config()
    cfg["colour"] = "blue"
    with pytest.raises(ConfigError) as info:
        model_from_config(cfg)
    assert info.value.key == "colour"


def test_missing_key_rejected():
    cfg = small_config()
    del cfg["discount"]
    with pytest.raises(ConfigError) as info:
        model_from_config(cfg)
    assert info.value.key == "discount"


def test_save_load_round_trip(tmp_path, model):
    path = tmp_path / "m.json"
    save_model(model, path)
    again = load_model(path)
    assert models_equal(model, again)
    assert np.array_equal(model.kernel, again.kernel)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(0, 6), st.floats(0, 1), st.floats(0.01, 2.0))
def test_round_trip_random_configs(tmp_path_factory, U, B, q, D):
    cfg = small_config(U=U, B=B, charge_prob=q, data_budget=D)
    m = model_from_config(cfg)
    path = tmp_path_factory.mktemp("cfg") / "m.json"
    save_model(m, path)
    assert models_equal(m, load_model(path))
    assert np.abs(m.kernel.sum(axis=2) - 1).max() <= 1e-10


def test_default_config_file_is_complete():
    cfg = default_config()
    assert len(cfg["activities"]) == 6
    assert json.loads(json.dumps(cfg)) == cfg
