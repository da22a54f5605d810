import numpy as np
import pytest
from hypothesis import given, strategies as st

from relloc.errors import RepeatedSmallestSingularValue
from relloc.map_estimator import NoiseConfig
from relloc.simulator.measurements import synthesize_measurements
from relloc.manifold import check_gradient
from relloc.wtls import (STATE_MANIFOLD, WtlsCost, build_noisy_system, pack_measurements,
                         refine_angles, tls_closed_form, wtls_from_measurements, wtls_solve)



@given(st.lists(st.floats(0.2, 1.2), min_size=3, max_size=3), st.lists(st.booleans(), min_size=3, max_size=3))
def test_refinement_sums_to_pi(mags, neg):
    a = np.where(neg, -1.0, 1.0) * np.array(mags)
    r = refine_angles(a)
    assert abs(np.abs(r).sum() - np.pi) < 1e-12
    assert np.array_equal(np.sign(r), np.sign(a))


def _window(scenario, k=0, d=4, sa=0.01, sd=0.01, seed=0):
    frames = synthesize_measurements(scenario, NoiseConfig(sa, sd), seed=seed)
    ang = np.array([frames[t].angles[0] for t in range(k, k + d)])
    dp = np.array([frames[t].dp[:4] for t in range(k, k + d - 1)])
    return ang, dp


def test_tls_exact_on_clean_data(scenario):
    ang = scenario.exact_angles()[:4]
    dp = scenario.displacements()[:3, :4]
    sys = build_noisy_system(ang, dp, 0.01, 0.01)
    assert np.allclose(tls_closed_form(sys.C), scenario.true_state(0), atol=1e-6)


def test_repeated_singular_value():
    with pytest.raises(RepeatedSmallestSingularValue):
        tls_closed_form(np.zeros((20, 16)))


def test_wtls_gradient(scenario):
    ang, dp = _window(scenario, sa=0.02, sd=0.02)
    cost = WtlsCost(build_noisy_system(ang, dp, 0.02, 0.02)).cost_function()
    rng = np.random.default_rng(5)
    for _ in range(5):
        x = scenario.true_state(0) + 0.05 * rng.normal(size=15)
        assert check_gradient(cost, STATE_MANIFOLD.normalize(x), rng) < 1e-5


def test_cost_batch_matches_single(scenario):
    ang, dp = _window(scenario)
    cost = WtlsCost(build_noisy_system(ang, dp, 0.01, 0.01))
    X = np.array([STATE_MANIFOLD.normalize(scenario.true_state(0) + 0.01 * i) for i in range(3)])
    f, G = cost.value_grad_batch(X)
    for i in range(3):
        fi, gi = cost.value_grad(X[i])
        assert np.isclose(f[i], fi) and np.allclose(G[i], gi)


def test_wtls_noiseless(scenario):
    est = wtls_from_measurements(scenario.exact_angles()[:4], scenario.displacements()[:3, :4], 0.0, 0.0)
    x = scenario.true_state(0)
    assert np.max(np.abs(est.x - x)) < 1e-6 * np.abs(x).max()


def test_wtls_improves_cost_and_covers(scenario):
    ang, dp = _window(scenario, sa=0.01, sd=0.01, seed=11)
    est = wtls_solve(build_noisy_system(ang, dp, 0.01, 0.01))
    assert est.cost <= est.cost_init + 1e-12
    assert STATE_MANIFOLD.is_valid(est.x, 1e-9)
    assert np.all(est.ci[:, 0] <= est.x) and np.all(est.x <= est.ci[:, 1])
    assert np.all(np.linalg.eigvalsh(est.crlb) > -1e-10)
    assert pack_measurements(ang, dp).size == 13 * 4 + 12 * 3
