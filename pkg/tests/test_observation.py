import math
from itertools import combinations

import numpy as np
import pytest
from scipy import stats

from bridgenet.bridge import StateSpace, default_bridge, make_toeplitz_transition
from bridgenet.errors import CalibrationFailed, EmptySample, InvalidArgument
from bridgenet.graph import CommunityLayout, WeightedGraph, graph_conductance
from bridgenet.observation import (
    SIGMA_MIN,
    EdgeSampleConfig,
    NoiseModel,
    calibrate_noise,
    emission_likelihood,
    emission_likelihoods,
    fit_noise,
    kolmogorov_q,
    ks_test_gaussian,
    observed_conductance,
    sample_edges,
    sample_size,
    scaled_emissions,
    state_graph,
)

TEN_EDGES = WeightedGraph.from_edges(6, [(i, j, 1.0) for i, j in combinations(range(5), 2)])


def test_sample_size_rounds_half_up():
    assert sample_size(10, 0.5) == 5
    assert sample_size(265, 0.5) == 133
    assert sample_size(10, 0.01) == 0


def test_full_sample_is_identity():
    sub = sample_edges(TEN_EDGES, EdgeSampleConfig(1.0, seed=3))
    assert sub.edges == TEN_EDGES.edges


def test_tiny_gamma_is_empty():
    with pytest.raises(EmptySample):
        sample_edges(TEN_EDGES, EdgeSampleConfig(0.01))


def test_gamma_out_of_range():
    with pytest.raises(InvalidArgument):
        EdgeSampleConfig(0.0)
    with pytest.raises(InvalidArgument):
        EdgeSampleConfig(1.5)


def test_half_sample_is_uniform_over_subsets():
    rng = np.random.default_rng(0)
    index = {frozenset(c): k for k, c in enumerate(combinations(range(10), 5))}
    counts = np.zeros(len(index))
    lookup = {e[:2]: k for k, e in enumerate(TEN_EDGES.edges)}
    for _ in range(10_000):
        sub = sample_edges(TEN_EDGES, EdgeSampleConfig(0.5), rng)
        assert sub.n_edges == 5
        counts[index[frozenset(lookup[e[:2]] for e in sub.edges)]] += 1
    assert stats.chisquare(counts).pvalue > 1e-3


def test_full_observation_has_zero_noise():
    g = state_graph(CommunityLayout(4, 5), 0.6)
    sub = sample_edges(g, EdgeSampleConfig(1.0))
    assert 1.0 * observed_conductance(sub, "exact") == graph_conductance(g, "exact")


def test_disconnected_sample_gives_zero():
    g = WeightedGraph.from_edges(4, [(0, 1, 1.0), (2, 3, 1.0)])
    assert observed_conductance(g) == 0.0


def test_monte_carlo_mean_matches_calibration():
    layout = CommunityLayout(10, 20)
    space = StateSpace(6)
    bridge = default_bridge(make_toeplitz_transition(6), 20, space)
    noise, _ = calibrate_noise(layout, bridge, EdgeSampleConfig(0.5, seed=100), 100)
    k = space.index_of(0.6)
    g = state_graph(layout, 0.6)
    phi = graph_conductance(g)
    rng = np.random.default_rng(9)
    e = np.array([0.5 * observed_conductance(sample_edges(g, EdgeSampleConfig(0.5), rng)) - phi
                  for _ in range(10_000)])
    se = e.std(ddof=1) / math.sqrt(e.size)
    assert abs(e.mean() - noise.mu[k]) < 3 * math.hypot(se, noise.sigma[k] / math.sqrt(noise.n_samples[k]))


def test_full_observation_calibration_floors_sigma():
    layout = CommunityLayout(3, 4)
    bridge = default_bridge(make_toeplitz_transition(4), 5)
    noise, report = calibrate_noise(layout, bridge, EdgeSampleConfig(1.0), 100, "exact")
    visited = noise.n_samples >= 30
    assert np.all(noise.sigma[visited] == SIGMA_MIN)
    assert np.all(noise.mu[visited] == 0.0)
    assert not report.fallback[visited].any()


def test_unvisited_states_use_pooled_fit():
    samples = [np.random.default_rng(1).normal(0, 0.1, 200), np.array([]), np.random.default_rng(2).normal(0, 0.2, 50)]
    model, fallback = fit_noise(samples)
    assert fallback.tolist() == [False, True, False]
    assert model.mu[1] == model.pooled_mu
    assert model.sigma[1] == model.pooled_sigma


def test_calibration_failed_when_no_state_has_enough_samples():
    with pytest.raises(CalibrationFailed):
        fit_noise([np.zeros(5), np.zeros(3)])


def test_noise_model_json_round_trip(tmp_path):
    model = NoiseModel([0.0, 0.01], [0.02, 0.03], 0.005, 0.025, n_samples=[40, 50], reference=[0.0, 0.1], gamma=0.5)
    model.save(tmp_path / "n.json")
    back = NoiseModel.load(tmp_path / "n.json")
    assert back.to_dict() == model.to_dict()


def test_emission_density_at_mode():
    space = StateSpace(3)
    noise = NoiseModel.gaussian(3, 0.2, mu=0.05)
    assert emission_likelihood(0.55, 1, space, noise) == pytest.approx(1 / (0.2 * math.sqrt(2 * math.pi)))


def test_emission_symmetry_and_hand_value():
    space = StateSpace(2)
    noise = NoiseModel.gaussian(2, 0.1)
    assert emission_likelihood(0.1, 0, space, noise) == pytest.approx(2.4197, abs=1e-4)
    assert emission_likelihood(0.1, 0, space, noise) == pytest.approx(emission_likelihood(-0.1, 0, space, noise))
    np.testing.assert_allclose(emission_likelihoods(0.3, space, noise),
                               stats.norm.pdf(0.3, loc=space.values, scale=0.1))


def test_missing_observation_is_uninformative():
    space = StateSpace(4)
    np.testing.assert_array_equal(scaled_emissions([np.nan], space, NoiseModel.gaussian(4, 0.1)), [[1, 1, 1, 1]])


def test_scaled_emissions_survive_tiny_sigma():
    space = StateSpace(4)
    row = scaled_emissions([0.9], space, NoiseModel.gaussian(4, SIGMA_MIN))[0]
    assert row.max() == 1.0 and np.argmax(row) == 3


def test_ks_statistic_matches_scipy():
    rng = np.random.default_rng(0)
    for n in (8, 50, 500):
        x = rng.normal(0.2, 1.5, n)
        d, p = ks_test_gaussian(x, 0.2, 1.5)
        ref = stats.kstest(x, "norm", args=(0.2, 1.5))
        assert d == pytest.approx(ref.statistic, abs=1e-12)
        lam = (math.sqrt(n) + 0.12 + 0.11 / math.sqrt(n)) * d
        assert p == pytest.approx(stats.kstwobign.sf(lam), abs=1e-10)


def test_ks_p_value_close_to_scipy_exact():
    x = np.random.default_rng(3).normal(size=200)
    _, p = ks_test_gaussian(x, 0, 1)
    assert p == pytest.approx(stats.kstest(x, "norm").pvalue, abs=0.01)


def test_ks_null_and_power():
    rng = np.random.default_rng(2024)
    assert ks_test_gaussian(rng.normal(size=10_000), 0, 1)[1] > 0.05
    u = rng.uniform(size=10_000)
    assert ks_test_gaussian(u, 0.5, 1 / math.sqrt(12))[1] < 0.01


def test_ks_constant_sample():
    d, _ = ks_test_gaussian(np.full(20, 0.3), 0.3, 0.1)
    assert d == 0.5


def test_ks_needs_eight_samples():
    with pytest.raises(InvalidArgument):
        ks_test_gaussian(np.zeros(7), 0, 1)


def test_kolmogorov_q_limits():
    assert kolmogorov_q(0.0) == 1.0
    assert kolmogorov_q(5.0) == pytest.approx(0.0, abs=1e-15)
    assert kolmogorov_q(1.0) == pytest.approx(stats.kstwobign.sf(1.0), abs=1e-12)


def test_calibration_independent_of_jobs():
    layout = CommunityLayout(4, 5)
    bridge = default_bridge(make_toeplitz_transition(4), 5)
    cfg = EdgeSampleConfig(0.5, seed=7)
    a, _ = calibrate_noise(layout, bridge, cfg, 100)
    b, _ = calibrate_noise(layout, bridge, cfg, 100, jobs=2)
    assert a.to_dict() == b.to_dict()


def test_calibration_requires_100_runs():
    bridge = default_bridge(make_toeplitz_transition(4), 5)
    with pytest.raises(InvalidArgument):
        calibrate_noise(CommunityLayout(4, 5), bridge, EdgeSampleConfig(0.5), 50)
