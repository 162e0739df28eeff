import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import enumerate_paths, gaussian_pdf

from bridgenet.bridge import (
    BridgeSegment,
    StateSpace,
    default_bridge,
    make_toeplitz_transition,
    sample_paths,
)
from bridgenet.errors import InfeasibleStart, InvalidArgument
from bridgenet.estimation import (
    HmbParameters,
    SmoothedStats,
    backward,
    em_fit,
    forward,
    initial_parameters,
    log_likelihood,
    project_rows_to_simplex,
    q_function,
    smooth,
    toeplitz_decay,
)
from bridgenet.observation import SIGMA_MIN


def params(P, sigma, T, n=None):
    P = np.asarray(P, dtype=float)
    return HmbParameters.from_bridge(default_bridge(P, T, StateSpace(P.shape[0])), sigma)


def brute_force(theta: HmbParameters, y):
    """Likelihood, state marginals and pair marginals by path enumeration."""
    n = theta.space.n_states
    pins = {t - theta.segments[0].start_time: s for t, s in theta.bridge.pins.items()}
    paths, prior = enumerate_paths(theta.P, pins, theta.bridge.initial_distribution(), len(y))
    lik = np.array([np.prod([gaussian_pdf(y[k], theta.space.values[s], theta.sigma) for k, s in enumerate(p)])
                    for p in paths])
    joint = prior * lik
    total = joint.sum()
    L = len(y)
    gamma = np.zeros((L, n))
    xi = np.zeros((L - 1, n, n))
    for p, w in zip(paths, joint / total):
        gamma[np.arange(L), p] += w
        for k in range(L - 1):
            xi[k, p[k], p[k + 1]] += w
    return math.log(total), gamma, xi


def test_horizon_one_step():
    theta = HmbParameters(np.eye(2) * 0.5 + 0.25, 0.2, StateSpace(2), (BridgeSegment(1, 2, 1),), initial_index=0)
    y = np.array([0.1, 0.9])
    alpha, ll = forward(theta, y)
    np.testing.assert_allclose(alpha[0], [1, 0])
    want = math.log(gaussian_pdf(0.1, 0.0, 0.2)) + math.log(gaussian_pdf(0.9, 1.0, 0.2))
    assert ll == pytest.approx(want, abs=1e-12)


def test_likelihood_matches_enumeration_two_states():
    theta = params([[0.7, 0.3], [0.4, 0.6]], 0.3, 3)  # horizon 5 with pins at 1, 3, 5
    y = np.array([0.9, 0.4, 0.2, 0.6, 1.1])
    ll, gamma, xi = brute_force(theta, y)
    assert log_likelihood(theta, y) == pytest.approx(ll, abs=1e-9)
    st_ = smooth(theta, y)
    np.testing.assert_allclose(st_.gamma, gamma, atol=1e-10)
    np.testing.assert_allclose(st_.xi, xi, atol=1e-10)


def test_smoother_with_unknown_start_and_gap():
    P = np.array([[0.5, 0.3, 0.2], [0.2, 0.5, 0.3], [0.1, 0.3, 0.6]])
    theta = HmbParameters(P, 0.25, StateSpace(3), (BridgeSegment(1, 5, 2),))
    y = np.array([0.2, np.nan, 0.7, 0.4, 0.9])
    ll, gamma, xi = brute_force_gap(theta, y)
    assert log_likelihood(theta, y) == pytest.approx(ll, abs=1e-9)
    np.testing.assert_allclose(smooth(theta, y).gamma, gamma, atol=1e-10)


def brute_force_gap(theta, y):
    filled = np.where(np.isfinite(y), y, 0.0)
    n = theta.space.n_states
    pins = {t - 1: s for t, s in theta.bridge.pins.items()}
    paths, prior = enumerate_paths(theta.P, pins, theta.bridge.initial_distribution(), len(y))
    lik = np.array([np.prod([gaussian_pdf(filled[k], theta.space.values[s], theta.sigma)
                             for k, s in enumerate(p) if np.isfinite(y[k])]) for p in paths])
    joint = prior * lik
    gamma = np.zeros((len(y), n))
    for p, w in zip(paths, joint / joint.sum()):
        gamma[np.arange(len(y)), p] += w
    return math.log(joint.sum()), gamma, None


def test_backward_terminal_ones_and_alpha_beta_constant():
    theta = params(make_toeplitz_transition(3), 0.2, 4)
    y = np.random.default_rng(0).normal(0.5, 0.3, 7)
    beta = backward(theta, y)
    np.testing.assert_allclose(beta[-1], 1.0)
    alpha, _ = forward(theta, y)
    np.testing.assert_allclose((alpha * beta).sum(axis=1), 1.0, atol=1e-12)


def test_smoothed_stats_consistency():
    theta = params(make_toeplitz_transition(4), 0.15, 5)
    y = np.random.default_rng(1).normal(0.5, 0.3, 9)
    st_ = smooth(theta, y)
    np.testing.assert_allclose(st_.gamma.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(st_.xi.sum(axis=2), st_.gamma[:-1], atol=1e-12)
    np.testing.assert_allclose(st_.xi.sum(axis=1), st_.gamma[1:], atol=1e-12)
    np.testing.assert_allclose(st_.gamma[0], [0, 0, 0, 1])
    np.testing.assert_allclose(st_.gamma[4], [1, 0, 0, 0])


def test_noiseless_smoother_is_delta_at_truth():
    bridge = default_bridge(make_toeplitz_transition(5), 6)
    states = sample_paths(bridge, 1, 3)[0]
    theta = HmbParameters.from_bridge(bridge, SIGMA_MIN)
    st_ = smooth(theta, bridge.space.values[states])
    np.testing.assert_allclose(st_.gamma, np.eye(5)[states], atol=1e-12)


def test_sigma_closed_form_maximises_q():
    theta = params(make_toeplitz_transition(3), 0.3, 4)
    y = np.random.default_rng(4).normal(0.5, 0.25, 7)
    st_ = smooth(theta, y)
    r = y[:, None] - theta.space.values[None, :]
    s2 = float((r * r * st_.gamma).sum() / y.size)
    best = q_function(theta.replace(sigma=math.sqrt(s2)), st_, y)
    for f in (0.8, 0.95, 1.05, 1.3):
        assert q_function(theta.replace(sigma=math.sqrt(s2 * f)), st_, y) < best


def test_q_changes_when_stats_are_scaled():
    theta = params(make_toeplitz_transition(3), 0.3, 4)
    y = np.random.default_rng(4).normal(0.5, 0.25, 7)
    st_ = smooth(theta, y)
    doubled = SmoothedStats(2 * st_.gamma, 2 * st_.xi, st_.log_likelihood)
    assert q_function(theta, doubled, y) != q_function(theta, st_, y)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(st.floats(-5, 5), min_size=4, max_size=4), min_size=1, max_size=4))
def test_projection_lands_on_simplex(rows):
    X = project_rows_to_simplex(np.array(rows), floor=1e-8)
    assert np.all(X >= 1e-8 - 1e-15)
    np.testing.assert_allclose(X.sum(axis=1), 1.0, atol=1e-12)


def test_projection_fixes_simplex_points():
    P = make_toeplitz_transition(4)
    np.testing.assert_allclose(project_rows_to_simplex(P), P, atol=1e-15)


def synthetic(P, sigma, n_seq, T, seed):
    theta = params(P, sigma, T)
    rng = np.random.default_rng(seed)
    paths = sample_paths(theta.bridge, n_seq, rng)
    return theta, [theta.space.values[p] + sigma * rng.standard_normal(p.size) for p in paths]


def test_em_trace_nondecreasing_and_sigma_only_step():
    theta, seqs = synthetic(make_toeplitz_transition(3, 0.4), 0.15, 5, 5, 2)
    init = theta.replace(P=make_toeplitz_transition(3, 0.1), sigma=0.4)
    params_, trace = em_fit(seqs, init, max_iters=15)
    assert all(b >= a for a, b in zip(trace, trace[1:]))
    assert trace[-1] > trace[0]
    res = em_fit(seqs, init, max_iters=1, fit_P=False)
    assert res.trace[1] >= res.trace[0]
    np.testing.assert_array_equal(res.params.P, init.P)


def test_em_toeplitz_mode_recovers_decay():
    theta, seqs = synthetic(make_toeplitz_transition(4, 0.3), 0.08, 40, 8, 5)
    init = theta.replace(P=make_toeplitz_transition(4, 0.6), sigma=0.2)
    res = em_fit(seqs, init, max_iters=50, mode="toeplitz")
    assert toeplitz_decay(res.params.P) == pytest.approx(0.3, abs=0.08)
    assert res.params.sigma == pytest.approx(0.08, rel=0.15)


def test_em_rejects_unknown_mode():
    theta, seqs = synthetic(make_toeplitz_transition(3), 0.1, 2, 3, 0)
    with pytest.raises(InvalidArgument):
        em_fit(seqs, theta, mode="diagonal")


def test_em_infeasible_start():
    # a chain that can never leave the top state cannot hit the bottom pin
    P = np.array([[0.5, 0.5], [0.0, 1.0]])
    theta = params(P, 0.1, 3)
    with pytest.raises(InfeasibleStart):
        em_fit([np.array([1.0, 0.5, 0.0, 0.5, 1.0])], theta)


def test_initial_parameters_and_round_trip(tmp_path):
    _, seqs = synthetic(make_toeplitz_transition(3), 0.1, 3, 4, 0)
    segs = default_bridge(make_toeplitz_transition(3), 4).segments
    init = initial_parameters(seqs, StateSpace(3), segs, 2)
    assert init.sigma >= SIGMA_MIN
    init.save(tmp_path / "p.json")
    back = HmbParameters.load(tmp_path / "p.json")
    assert back.to_dict() == init.to_dict()
