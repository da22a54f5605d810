import numpy as np
import pytest

from relloc.map_estimator import NoiseConfig
from relloc.simulator import ExperimentConfig, aggregate, rmse, run_monte_carlo
from relloc.simulator.baselines import GaussianState, BaselineConfig, run_ekf, run_pf, to_intrinsic
from relloc.simulator.measurements import (OutlierSpike, read_log, synthesize_measurements, tetra_stream,
                                          write_log)
from relloc.simulator.scenario import ScenarioConfig, generate_scenario


def test_scenario_deterministic():
    a = generate_scenario(ScenarioConfig(instants=6), seed=9)
    b = generate_scenario(ScenarioConfig(instants=6), seed=9)
    assert a.fingerprint() == b.fingerprint()
    assert np.array_equal(a.positions, b.positions)
    assert generate_scenario(ScenarioConfig(instants=6), seed=10).fingerprint() != a.fingerprint()


def test_scenario_stays_in_cube(scenario):
    h = scenario.cfg.half_width
    assert np.all(np.abs(scenario.positions) <= h + 1e-9)
    steps = np.linalg.norm(np.diff(scenario.positions, axis=0), axis=-1)
    assert np.all(steps <= scenario.cfg.step_max + 1e-9)


def test_noise_calibration(scenario):
    frames = synthesize_measurements(scenario, NoiseConfig(0.02, 0.03), seed=1)
    ex = scenario.exact_angles()
    ea = np.concatenate([f.angles[0] - ex[f.k] for f in frames])
    ed = np.concatenate([(f.dp - scenario.displacements()[f.k]).ravel() for f in frames[:-1]])
    assert abs(ea.std() - 0.02) < 0.004
    assert abs(ed.std() - 0.03) < 0.006


def test_outlier_spikes_and_log(scenario, tmp_path):
    frames = synthesize_measurements(scenario, NoiseConfig(0.0, 0.0), sigma_dist=0.05,
                                     outliers=[OutlierSpike((0, 2), 3, 10.0)], seed=2)
    assert frames[3].corrupted == [(0, 2)]
    assert frames[3].distances[2, 0] == frames[3].distances[0, 2]
    path = tmp_path / "log.ndjson"
    write_log(path, frames)
    back = read_log(path)
    assert len(back) == len(frames)
    ang, dp = tetra_stream(frames, (0, 1, 2, 3))
    assert ang.shape == (scenario.T, 13) and dp.shape == (scenario.T - 1, 4, 3)


def test_rmse_oracle():
    x = np.zeros(15)
    y = np.full(15, 2.0)
    assert rmse(y, x) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        rmse(np.zeros(3), x)


def test_filters_track_with_exact_prior(scenario):
    ang = scenario.exact_angles()
    dp = scenario.displacements()[:, :4]
    X = scenario.true_states()
    prior = GaussianState(to_intrinsic(X[0]), 1e-8 * np.eye(12))
    noise = NoiseConfig(0.0, 0.0)
    ekf = run_ekf(ang, dp, noise, prior)
    assert np.max(np.abs(ekf - X)) < 1e-6
    pf = run_pf(ang, dp, noise, prior, np.random.default_rng(0), BaselineConfig(n_particles=300))
    assert np.max(np.abs(pf - X)) < 1e-2


def test_montecarlo_deterministic():
    cfg = ExperimentConfig(sigmas=(0.01,), algorithms=("alg1", "alg2"), trials=2, seed=5)
    a = run_monte_carlo(cfg)
    b = run_monte_carlo(cfg)
    assert [r.rmse for r in a] == [r.rmse for r in b]
    summ = aggregate(a, cfg.algorithms)
    assert [s.algorithm for s in summ] == ["alg1", "alg2"]
    assert all(s.trials == 2 for s in summ)


def test_experiment_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(algorithms=("nope",))
    with pytest.raises(ValueError):
        ExperimentConfig(trials=0)
