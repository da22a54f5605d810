import time

import numpy as np
import pytest

from relloc.manifold import check_gradient
from relloc.map_estimator import (GaussianPrior, MapCost, NoiseConfig, SlidingWindowConfig, WindowProblem, marginalize,
                                  measurement_predict, run_sliding_window, schur_marginal, transition_apply)
from relloc.nde import MdnConfig
from relloc.simulator.measurements import synthesize_measurements


def _noisy(scenario, sa=0.01, sd=0.01, seed=0):
    frames = synthesize_measurements(scenario, NoiseConfig(sa, sd), seed=seed)
    ang = np.array([f.angles[0] for f in frames])
    dp = np.array([f.dp[:4] for f in frames[:-1]])
    return ang, dp


def _spd(rng, n):
    A = rng.normal(size=(n, n))
    return A @ A.T + n * np.eye(n)


def test_schur_matches_dense_solve(rng):
    worst = 0.0
    for _ in range(200):
        n, m = 12, 9
        H = _spd(rng, n)
        g = rng.normal(size=n)
        Js, Hs, reg = marginalize(g, H, m)
        assert not reg
        # minimising the full quadratic over the dropped block gives the same reduced quadratic
        d_full = np.linalg.solve(H, -g)
        d_red = np.linalg.solve(Hs, -Js)
        worst = max(worst, np.max(np.abs(d_full[m:] - d_red)))
    assert worst < 1e-9


def test_schur_regularizes_singular_block(rng):
    H = _spd(rng, 6)
    H[:3, :3] = 0.0
    H[:3, 3:] = 0.0
    H[3:, :3] = 0.0
    _, _, reg = schur_marginal(np.zeros(6), H, np.arange(3), np.arange(3, 6))
    assert reg


def test_map_gradient_with_gaussian_prior(scenario):
    ang, dp = _noisy(scenario)
    K = 5
    x0 = scenario.true_state(0)
    prior = GaussianPrior(x0, np.diag(np.r_[np.full(9, 0.01), np.full(3, 0.001)]))
    cost = MapCost(WindowProblem(ang[:K], dp[:K - 1], NoiseConfig(0.01, 0.01), prior))
    states = scenario.true_states()[:K]
    v = cost.pack(states[:, :9], states[0, 9:]) + 0.01 * np.random.default_rng(1).normal(size=cost.n)
    assert check_gradient(cost.cost_function(), v) < 1e-5


def test_transition_and_measurement_models(scenario):
    X = scenario.true_states()
    dp = scenario.displacements()[:, :4]
    assert np.allclose(transition_apply(X[0], dp[0]), X[1], atol=1e-12)
    assert np.allclose(measurement_predict(X[2]), scenario.exact_angles()[2], atol=1e-12)


def test_window_config_validation():
    with pytest.raises(ValueError):
        SlidingWindowConfig(window=2)
    with pytest.raises(ValueError):
        SlidingWindowConfig(window=5, drop=5)
    with pytest.raises(ValueError):
        SlidingWindowConfig(prior="bogus")


def test_sliding_window_noiseless(scenario):
    ang = scenario.exact_angles()
    dp = scenario.displacements()[:, :4]
    res = run_sliding_window(ang, dp, NoiseConfig(0.0, 0.0), SlidingWindowConfig(window=6, drop=3, prior="gaussian"))
    X = scenario.true_states()[: len(res.estimates)]
    assert np.max(np.abs(res.estimates - X)) < 1e-5 * np.abs(X).max()
    assert len(res.windows) >= 2


def test_sliding_window_with_nde_prior(scenario):
    ang, dp = _noisy(scenario, seed=4)
    cfg = SlidingWindowConfig(window=6, drop=3, nde_samples=250, nde_repeats=2, nde_pilot=5,
                              mdn=MdnConfig(max_epochs=30, patience=10))
    res = run_sliding_window(ang, dp, NoiseConfig(0.01, 0.01), cfg)
    assert res.nde is not None and res.windows[0].prior_kind == "nde"
    err = np.abs(res.estimates[:, :9] - scenario.true_states()[: len(res.estimates), :9]).max()
    assert err < 1.0
