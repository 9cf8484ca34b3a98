import numpy as np
import pytest

from missnet.scenario import (ScenarioError, builtin, generate_regressor, level_regressor,
                              load_scenario, parse_config, spec_from_mapping)


def test_generic_constants():
    s = load_scenario("generic")
    assert (s.n_agents, s.dim) == (7, 5)
    assert s.w_true == (1.0, -0.5, 1.2, 0.4, 1.5)
    assert s.r_u_diag == (1.0, 1.6, 0.8, 0.95, 1.2)
    assert s.xi_params == (0.02, 0.44, 0.04, 0.09, 0.15, 0.26, 0.13)
    assert s.sigma_v2 == (0.01,) * 7 and s.step_sizes == (0.04,) * 7
    assert s.alphas == (0.01,) * 3 and s.warm_start_iters == 50
    assert s.maskable == (0,) and s.p == s.p_hat == 0.3


def test_household_constants():
    s = load_scenario("household")
    assert s.w_true == (0.054, 0.182, 0.204)
    np.testing.assert_allclose(s.sigma_xi2(), 0.25 / 3)
    assert s.alphas == (0.001, 0.001, 0.0001) and s.step_sizes[0] == 0.025
    assert s.warm_start_iters == 0 and s.xi_kind == "uniform"


def test_mental_health_constants():
    s = load_scenario("mental_health")
    assert s.w_true == (0.27, -0.03, -0.06, 0.13, 0.73, -0.28, 0.22)
    assert s.r_u_diag == (0.25, 252.0, 2.0, 2.967, 0.11, 1.25, 4.0)
    assert s.maskable == (4,) and s.xi_params == (0.004,) * 7
    assert s.step_sizes[0] == 0.0025 and s.alphas == (1e-4,) * 3


def test_override_p():
    s = load_scenario("generic", p=0.4)
    assert s.p == s.p_hat == 0.4
    assert s.w_true == builtin("generic").w_true


def test_level_generator_exact_cases():
    rng = np.random.default_rng(0)
    draw = level_regressor((2, 55), (0.25, 252.0))
    x = draw(rng, (200_000,))
    assert set(np.unique(x[:, 0])) == {-0.5, 0.5}
    assert np.unique(x[:, 1]).size == 55
    assert x[:, 1].max() == 27.0 and x[:, 1].min() == -27.0


@pytest.mark.parametrize("name", ["generic", "household", "mental_health"])
def test_regressor_covariance(name):
    s = load_scenario(name)
    u = generate_regressor(s, np.random.default_rng(3), 1_000_000)
    np.testing.assert_allclose(u.var(axis=0), s.r_u_diag, rtol=0.02)
    assert np.all(np.abs(u.mean(axis=0)) < 0.01 * np.sqrt(s.r_u_diag))
    c = np.corrcoef(u.T)
    assert np.max(np.abs(c - np.eye(s.dim))) < 0.01


def test_config_file(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("# a comment\nbase = generic\np = 0.4   # override\nhorizon = 100\n")
    s = load_scenario(path)
    assert s.p == 0.4 and s.p_hat == 0.4 and s.horizon == 100 and s.n_agents == 7


def test_config_standalone():
    text = """
n_agents = 2
w_true = [1.0]
r_u_diag = [1.0]
sigma_v2 = 0.001
p = 0.3
xi_kind = "gaussian"
xi_params = [0.5, 0.3]
topology = complete
mu = 0.01
alpha = 1e-4
horizon = 10
"""
    s = spec_from_mapping(parse_config(text))
    assert s.n_agents == 2 and s.step_sizes == (0.01, 0.01) and s.alphas == (1e-4,) * 3
    np.testing.assert_array_equal(s.combination_matrix(), np.full((2, 2), 0.5))


def test_config_edges_and_isolated():
    s = spec_from_mapping(parse_config("base = generic\nedges = [(1,2),(2,3),(3,4),(4,5),(5,6),(6,7)]"))
    assert len(s.topology.edges) == 6
    s = spec_from_mapping(parse_config("base = generic\ntopology = isolated"))
    np.testing.assert_array_equal(s.combination_matrix(), np.eye(7))


@pytest.mark.parametrize("text,key,line", [
    ("base = generic\nbogus = 1", "bogus", 2),
    ("base = generic\np = [1, 2", "p", 2),
    ("base = generic\np = 0.2\np = 0.3", "p", 3),
    ("base = generic\nmu = [0.1, 0.2]", "mu", 2),
    ("base = generic\nalphas = [0.1, 2.0, 0.1]", "alphas", 2),
])
def test_config_errors(text, key, line):
    with pytest.raises(ScenarioError) as exc:
        spec_from_mapping(parse_config(text))
    assert exc.value.key == key and exc.value.line == line


def test_config_missing_key():
    with pytest.raises(ScenarioError, match="required key"):
        spec_from_mapping(parse_config("n_agents = 2"))


def test_disconnected_topology_rejected():
    with pytest.raises(ScenarioError, match="not connected"):
        spec_from_mapping(parse_config("base = generic\nedges = [(1, 2)]"))


def test_unknown_scenario():
    with pytest.raises(ScenarioError):
        load_scenario("no_such_scenario_or_file")
