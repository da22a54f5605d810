import numpy as np
import pytest

from relloc.errors import AssumptionViolated, SingularNormalEquations
from relloc.geometry import tetra_angle_array
from relloc.linear import (RelativeState, build_coefficients, coefficient_arrays, detect_degeneracy, propagate_state,
                           solve_aligned, solve_unaligned, stacked_system)

from conftest import random_tetra


def test_angle_induced_equation_holds(rng):
    for _ in range(200):
        P = random_tetra(rng)
        A = coefficient_arrays(tetra_angle_array(P))
        p = -P
        assert np.max(np.abs(A[0] @ p[0] + A[1] @ p[1] + A[2] @ p[2])) < 1e-9 * np.abs(p).max()


def test_assumption1_rejects_zero_angle():
    a = np.full(13, 1.0)
    a[0] = 0.0
    with pytest.raises(AssumptionViolated):
        build_coefficients(a)


def test_unaligned_exact(scenario):
    ang = scenario.exact_angles()
    dp = scenario.displacements()[:, :4]
    X = scenario.true_states()
    for k in range(scenario.T - 2):
        sol = solve_unaligned(ang[k: k + 3], dp[k: k + 2])
        assert np.max(np.abs(sol.x - X[k])) < 1e-6 * np.abs(X[k]).max()


def test_stacked_system_consistent(scenario):
    A, b = stacked_system(scenario.exact_angles()[:4], scenario.displacements()[:3, :4])
    x = scenario.true_state(0)
    assert A.shape == (24, 15)
    assert np.max(np.abs(A @ x - b)) < 1e-8 * max(1.0, np.abs(b).max())


def test_aligned_exact():
    from relloc.simulator.scenario import ScenarioConfig, generate_scenario
    sc = generate_scenario(ScenarioConfig(aligned=True, instants=4), seed=7)
    ang = sc.exact_angles()
    dp = sc.displacements()[:, :4]
    p, _ = solve_aligned(ang[0], ang[1], dp[0])
    assert np.allclose(np.ravel(p), sc.true_state(0)[:9], atol=1e-6)


def test_static_robots_singular(scenario):
    ang = np.repeat(scenario.exact_angles()[:1], 3, axis=0)
    with pytest.raises(SingularNormalEquations):
        solve_unaligned(ang, np.zeros((2, 4, 3)))


def test_degeneracy_flags(scenario):
    a = scenario.exact_angles()
    rep = detect_degeneracy(a[0], a[0])
    assert rep.strong_similarity and rep.flagged
    assert not detect_degeneracy(a[0], a[1]).strong_similarity


def test_state_roundtrip(rng):
    x = np.concatenate([rng.normal(size=9), np.tile([0.6, 0.8], 3)])
    assert np.array_equal(RelativeState.from_vector(x).as_vector(), x)


def test_propagation_matches_truth(scenario):
    X = scenario.true_states()
    dp = scenario.displacements()[:, :4]
    for k in range(scenario.T - 1):
        assert np.allclose(propagate_state(X[k], dp[k]), X[k + 1], atol=1e-12)
