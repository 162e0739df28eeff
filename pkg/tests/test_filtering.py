import numpy as np
import pytest
from oracles import enumerate_paths, gaussian_pdf

from bridgenet import kernels
from bridgenet.bridge import (
    BridgeProcess,
    BridgeSegment,
    StateSpace,
    default_bridge,
    make_toeplitz_transition,
    sample_trajectory,
)
from bridgenet.errors import InvalidArgument
from bridgenet.filtering import (
    FilterRun,
    HmbModel,
    HmmModel,
    hmb_filter_step,
    hmm_filter_step,
    mse,
    point_estimate,
    run_filter,
)
from bridgenet.observation import SIGMA_MIN, NoiseModel


def two_state_bridge():
    P = np.array([[0.8, 0.2], [0.2, 0.8]])
    return BridgeProcess(P, StateSpace(2), (BridgeSegment(1, 3, 1),), initial_index=0)


def likelihood_noise(lik):
    # residual 0 under state i has density lik[i] when sigma_i = 1/(lik[i] sqrt(2 pi))
    lik = np.asarray(lik, dtype=float)
    sigma = 1.0 / (lik * np.sqrt(2 * np.pi))
    return NoiseModel(np.zeros(lik.size), sigma, 0.0, 1.0, reference=np.zeros(lik.size))


def test_hmb_step_worked_case():
    bridge = two_state_bridge()
    post = hmb_filter_step([0.5, 0.5], 0.0, 1, bridge, bridge.space, likelihood_noise([1.0, 3.0]))
    unnorm = np.array([0.5 * 0.5 + 0.5 * 0.04 / 0.68, 3 * (0.5 * 0.5 + 0.5 * 0.64 / 0.68)])
    np.testing.assert_allclose(post, unnorm / unnorm.sum())
    np.testing.assert_allclose(post, [0.1144, 0.8856], atol=1e-4)


def test_hmm_step_worked_case():
    P = np.array([[0.8, 0.2], [0.2, 0.8]])
    post = hmm_filter_step([0.5, 0.5], 0.0, P, StateSpace(2), likelihood_noise([1.0, 3.0]))
    np.testing.assert_allclose(post, [0.25, 0.75])


def test_uniform_emission_is_pure_prediction():
    bridge = default_bridge(make_toeplitz_transition(4), 5)
    noise = likelihood_noise([2.0] * 4)
    prior = np.array([0.1, 0.2, 0.3, 0.4])
    np.testing.assert_allclose(hmb_filter_step(prior, 0.0, 2, bridge, bridge.space, noise),
                               prior @ bridge.transitions[1])
    P = make_toeplitz_transition(4)
    np.testing.assert_allclose(hmm_filter_step(prior, 0.0, P, bridge.space, noise), prior @ P)


def test_identity_dynamics_is_pure_measurement():
    prior = np.array([0.2, 0.8])
    post = hmm_filter_step(prior, 0.0, np.eye(2), StateSpace(2), likelihood_noise([3.0, 1.0]))
    np.testing.assert_allclose(post, prior * [3, 1] / (prior * [3, 1]).sum())


def test_step_into_pin_is_delta():
    bridge = default_bridge(make_toeplitz_transition(5), 4)
    noise = NoiseModel.gaussian(5, 0.05)
    for z in (-1.0, 0.3, 2.0):
        post = hmb_filter_step(np.full(5, 0.2), z, 3, bridge, bridge.space, noise)
        np.testing.assert_allclose(post, [1, 0, 0, 0, 0])


def test_zero_length_run():
    model = HmbModel(default_bridge(make_toeplitz_transition(3), 4), NoiseModel.gaussian(3, 0.1))
    run = run_filter([], model)
    assert len(run) == 1
    np.testing.assert_allclose(run.posteriors[0], [0, 0, 1])


def test_run_rejects_too_many_observations():
    model = HmbModel(default_bridge(make_toeplitz_transition(3), 3), NoiseModel.gaussian(3, 0.1))
    with pytest.raises(InvalidArgument):
        run_filter(np.zeros(6), model)


def test_posterior_at_pins_is_delta():
    bridge = default_bridge(make_toeplitz_transition(5), 6)
    rng = np.random.default_rng(0)
    run = run_filter(rng.normal(0.5, 0.3, bridge.length), HmbModel(bridge, NoiseModel.gaussian(5, 0.2)))
    np.testing.assert_allclose(run.posteriors[5], [1, 0, 0, 0, 0])
    np.testing.assert_allclose(run.posteriors[-1], [0, 0, 0, 0, 1])


def test_noiseless_map_tracks_truth():
    bridge = default_bridge(make_toeplitz_transition(6), 10)
    traj = sample_trajectory(bridge, 4)
    z = traj.values(bridge.space)
    run = run_filter(z, HmbModel(bridge, NoiseModel.gaussian(6, SIGMA_MIN)), truth=traj.states)
    np.testing.assert_allclose(run.estimates("map"), z)
    assert mse(run, "map") == 0.0


def test_gap_is_prediction_only():
    bridge = default_bridge(make_toeplitz_transition(4), 5)
    model = HmbModel(bridge, NoiseModel.gaussian(4, 0.1))
    z = np.array([1.0, 0.6, np.nan, 0.3, 0.0, 0.4, 0.7, 0.9, 1.0])
    run = run_filter(z, model)
    np.testing.assert_allclose(run.posteriors[2], run.posteriors[1] @ bridge.transitions[1])


def brute_force_filter(P, pins, initial, y, values, sigma):
    """P(x_k | y_1..y_k) by enumerating every pinned path of the base chain."""
    paths, prior = enumerate_paths(P, pins, initial, len(y))
    n = P.shape[0]
    lik = np.array([[gaussian_pdf(yk, values[s], sigma) for yk in y] for s in range(n)])
    out = np.zeros((len(y), n))
    for k in range(len(y)):
        w = prior * np.prod([lik[paths[:, j], j] for j in range(k + 1)], axis=0)
        for s in range(n):
            out[k, s] = w[paths[:, k] == s].sum()
        out[k] /= out[k].sum()
    return out


@pytest.mark.parametrize("backend", sorted(kernels.BACKENDS))
def test_filter_matches_path_enumeration(backend):
    rng = np.random.default_rng(12)
    for n in (2, 3):
        space = StateSpace(n)
        P = rng.dirichlet(np.ones(n), size=n)
        T = 4
        bridge = default_bridge(P, T, space)
        pins = {0: n - 1, T - 1: 0, 2 * T - 2: n - 1}
        for _ in range(5):
            y = rng.normal(0.5, 0.4, bridge.length)
            run = run_filter(y, HmbModel(bridge, NoiseModel.gaussian(n, 0.3)), backend=backend)
            ref = brute_force_filter(P, pins, bridge.initial_distribution(), y, space.values, 0.3)
            np.testing.assert_allclose(run.posteriors, ref, atol=1e-10)


def test_hmm_model_ignores_pins():
    space = StateSpace(3)
    P = make_toeplitz_transition(3)
    model = HmmModel(P, space, NoiseModel.gaussian(3, 0.2), initial_index=2)
    run = run_filter(np.array([1.0, 0.5, 0.2]), model)
    ref = brute_force_filter(P, {0: 2}, model.initial(), [1.0, 0.5, 0.2], space.values, 0.2)
    np.testing.assert_allclose(run.posteriors, ref, atol=1e-12)


@pytest.mark.parametrize(
    "p, mean, map_",
    [([0, 0, 1, 0], 2 / 3, 2 / 3), ([0.25] * 4, 0.5, 0.0)],
)
def test_point_estimates(p, mean, map_):
    space = StateSpace(4)
    assert point_estimate(p, space, "mean") == pytest.approx(mean)
    assert point_estimate(p, space, "map") == pytest.approx(map_)


def test_point_estimate_two_states():
    space = StateSpace(2)
    assert point_estimate([0.25, 0.75], space, "mean") == 0.75
    assert point_estimate([0.25, 0.75], space, "map") == 1.0
    with pytest.raises(InvalidArgument):
        point_estimate([0.5, 0.5], space, "median")


def test_mse_examples():
    space = StateSpace(3)
    post = np.eye(3)[[0, 1, 2]]
    run = FilterRun(post, np.zeros(3), space, truth=np.array([0, 1, 2]))
    assert mse(run) == 0.0
    shifted = FilterRun(post, np.zeros(3), space, truth=np.array([0, 0, 1]))
    assert mse(shifted, "map") == pytest.approx((0 + 0.25 + 0.25) / 3)
    with pytest.raises(InvalidArgument):
        mse(FilterRun(post, np.zeros(3), space))


def test_mse_constant_offset():
    space = StateSpace(5)
    run = FilterRun(np.eye(5)[[1, 2, 3]], np.zeros(3), space, truth=np.array([0, 1, 2]))
    assert mse(run) == pytest.approx(0.25 ** 2)


def test_filter_csv(tmp_path):
    bridge = default_bridge(make_toeplitz_transition(3), 3)
    run = run_filter([1.0, np.nan, 0.0, 0.4, 1.0], HmbModel(bridge, NoiseModel.gaussian(3, 0.2)),
                     truth=np.array([2, 1, 0, 1, 2]))
    run.to_csv(tmp_path / "f.csv")
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0] == "t,observation,truth,estimate_mean,estimate_map,q_0,q_1,q_2"
    assert lines[2].split(",")[1] == ""
    assert len(lines) == 6
