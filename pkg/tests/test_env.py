import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pollkappa.env import (
    ConfigError,
    EnvModel,
    EnvState,
    ServiceDist,
    load_env_model,
    mean_service_time,
    model_from_dict,
    sample_env_indices,
    sample_env_state,
    single_state_model,
    validate_env_model,
)

from helpers import random_env_state, z_score


def _leave_state(eps=0.0):
    return EnvState([[eps]], [[1.0, 0.0]], [ServiceDist.deterministic(1.0)], ["gated"])


def test_valid_single_state_has_empty_report():
    assert validate_env_model(single_state_model(_leave_state())) == []


def test_gamma_row_sum_violation_names_row():
    st_ = EnvState([[0.0, 0.0], [0.0, 0.0]], [[0.9, 0.0, 0.0], [1.0, 0.0, 0.0]],
                   [ServiceDist.deterministic(1.0)] * 2, ["gated"] * 2)
    report = validate_env_model(single_state_model(st_))
    assert len(report) == 1
    assert report[0].path == "states[0].gamma[0]"


def test_probs_not_summing_to_one():
    model = EnvModel([_leave_state(), _leave_state(0.5)], [0.6, 0.6])
    report = validate_env_model(model)
    assert len(report) == 1
    assert report[0].path == "probs"
    assert "!= 1" in report[0].message


def test_report_collects_every_violation():
    bad = EnvState([[-1.0]], [[0.5, 0.7]], [ServiceDist.exponential(-2.0)], ["lazy"])
    paths = {v.path for v in validate_env_model(single_state_model(bad))}
    assert paths == {"states[0].eps[0][0]", "states[0].gamma[0]", "states[0].service[0].rate", "states[0].policy[0]"}


def test_gamma_entry_out_of_range():
    bad = EnvState([[0.0]], [[1.2, -0.2]], [ServiceDist.deterministic(1.0)], ["gated"])
    paths = [v.path for v in validate_env_model(single_state_model(bad))]
    assert paths == ["states[0].gamma[0][0]", "states[0].gamma[0][1]"]


def test_mismatched_station_counts():
    two = random_env_state(np.random.default_rng(0), 2)
    report = validate_env_model(EnvModel([_leave_state(), two], [0.5, 0.5]))
    assert any(v.path.startswith("states[1]") for v in report)


def test_lognormal_location_may_be_negative():
    st_ = EnvState([[0.0]], [[1.0, 0.0]], [ServiceDist.lognormal(-1.0, 0.5)], ["gated"])
    assert validate_env_model(single_state_model(st_)) == []


@pytest.mark.parametrize(
    "dist, mean",
    [
        (ServiceDist.deterministic(1.0), 1.0),
        (ServiceDist.exponential(2.0), 0.5),
        (ServiceDist.gamma(3.0, 4.0), 0.75),
        (ServiceDist.lognormal(0.0, 1.0), math.exp(0.5)),
    ],
)
def test_mean_service_time_closed_forms(dist, mean):
    assert mean_service_time(dist) == pytest.approx(mean, rel=1e-15)


@pytest.mark.parametrize(
    "dist",
    [ServiceDist.exponential(2.0), ServiceDist.gamma(2.0, 4.0), ServiceDist.lognormal(0.0, 1.0), ServiceDist.lognormal(-1.0, 0.5)],
)
def test_sampled_service_means_within_3se(dist):
    x = dist.sample(np.random.default_rng(1), 10**6)
    assert abs(z_score(x, dist.mean)) < 3


def test_single_state_always_drawn():
    model = single_state_model(_leave_state())
    rng = np.random.default_rng(2)
    assert all(sample_env_state(model, rng) is model.states[0] for _ in range(100))


def test_state_frequencies_within_3se():
    model = EnvModel([_leave_state(0.5), _leave_state(2.0)], [2 / 3, 1 / 3])
    rng = np.random.default_rng(3)
    n = 3 * 10**5
    hits = np.array([sample_env_state(model, rng) is model.states[0] for _ in range(n)], dtype=float)
    assert abs(z_score(hits, 2 / 3)) < 3


def test_zero_probability_state_never_drawn():
    model = EnvModel([_leave_state(0.5), _leave_state(2.0)], [1.0, 0.0])
    rng = np.random.default_rng(4)
    assert all(sample_env_state(model, rng) is model.states[0] for _ in range(10_000))
    assert (sample_env_indices(model, rng, 10_000) == 0).all()


def test_vectorised_indices_match_law():
    model = EnvModel([_leave_state(0.5), _leave_state(1.0), _leave_state(2.0)], [0.2, 0.5, 0.3])
    idx = sample_env_indices(model, np.random.default_rng(5), 3 * 10**5)
    for k, p in enumerate([0.2, 0.5, 0.3]):
        assert abs(z_score(idx == k, p)) < 3


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_fixed_seed_gives_identical_sequence(seed):
    model = EnvModel([_leave_state(0.5), _leave_state(2.0)], [0.4, 0.6])
    r1, r2 = np.random.default_rng(seed), np.random.default_rng(seed)
    s1 = [model.states.index(sample_env_state(model, r1)) for _ in range(50)]
    s2 = [model.states.index(sample_env_state(model, r2)) for _ in range(50)]
    assert s1 == s2


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), m=st.integers(1, 4))
def test_random_states_validate(seed, m):
    state = random_env_state(np.random.default_rng(seed), m)
    assert validate_env_model(single_state_model(state)) == []


def test_states_are_read_only():
    state = _leave_state()
    with pytest.raises(ValueError):
        state.eps[0, 0] = 1.0


def test_config_round_trip(tmp_path):
    state = random_env_state(np.random.default_rng(6), 3)
    model = EnvModel([state, state], [0.25, 0.75])
    path = tmp_path / "m.json"
    path.write_text(json.dumps(model.to_dict()))
    back = load_env_model(path)
    assert back.to_dict() == model.to_dict()


def test_loader_refuses_invalid_file(configs):
    with pytest.raises(ConfigError) as info:
        load_env_model(configs / "invalid_gamma.json")
    assert [v.path for v in info.value.report] == ["states[0].gamma[0]"]


def test_loader_reports_missing_fields():
    model, report = model_from_dict({"m": 1, "states": [{"prob": 1.0, "eps": [[0.0]]}]})
    assert model is None
    assert {v.path for v in report} == {"states[0].gamma", "states[0].service", "states[0].policy"}


def test_loader_checks_declared_m():
    raw = {"m": 2, "states": [{"prob": 1.0, "eps": [[0.0]], "gamma": [[1.0, 0.0]],
                               "service": [{"kind": "deterministic", "value": 1.0}], "policy": ["gated"]}]}
    _, report = model_from_dict(raw)
    assert [v.path for v in report] == ["m"]


@pytest.mark.parametrize("name", ["ref_mixed", "scalar_lattice", "scalar_nonlattice", "supercritical", "scalar_e", "zero_row"])
def test_shipped_configs_are_valid(configs, name):
    load_env_model(configs / f"{name}.json")
