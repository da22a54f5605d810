import numpy as np
import pytest
from hypothesis import given, strategies as st

from relloc.errors import NoProgress, RetractUndefined
from relloc.manifold import CostFunction, ProductManifold, TrustRegionConfig, check_gradient, trust_region_minimize

M = ProductManifold(3, 2)


def _point(rng):
    t = rng.uniform(-np.pi, np.pi, 2)
    return np.concatenate([rng.normal(size=3), np.column_stack([np.cos(t), np.sin(t)]).ravel()])


@given(st.integers(0, 10_000))
def test_retraction_stays_on_manifold(seed):
    rng = np.random.default_rng(seed)
    x = _point(rng)
    v = M.project_tangent(x, rng.normal(size=M.dim))
    assert M.is_valid(M.retract(x, v), 1e-12)
    assert abs(M.project_tangent(x, v)[3:5] @ x[3:5]) < 1e-12


def test_retract_undefined():
    x = np.array([0, 0, 0, 1.0, 0.0, 0.0, 1.0])
    with pytest.raises(RetractUndefined):
        M.retract(x, np.array([0, 0, 0, -1.0, 0.0, 0.0, 0.0]))


def test_basis_spans_tangent(rng):
    x = _point(rng)
    B = M.basis(x)
    for col in B.T:
        assert np.allclose(M.project_tangent(x, col), col)
    assert np.linalg.matrix_rank(B) == M.tangent_dim


def _target_cost(target):
    def vg(x):
        d = x - target
        return 0.5 * float(d @ d), d
    return CostFunction(M, value=lambda x: vg(x)[0], value_grad=vg)


def test_trust_region_finds_target(rng):
    target = _point(rng)
    cost = _target_cost(target)
    res = trust_region_minimize(cost, _point(rng))
    assert np.allclose(res.x, target, atol=1e-6)
    assert check_gradient(cost, _point(rng)) < 1e-5


def test_near_antipodal_start_converges():
    target = np.array([1.0, 2.0, 3.0, 1.0, 0.0, 0.0, 1.0])
    start = np.array([0.0, 0.0, 0.0, -1.0, 0.05, 0.05, -1.0])
    start = M.normalize(start)
    res = trust_region_minimize(_target_cost(target), start)
    assert np.allclose(res.x, target, atol=1e-5)


def test_no_progress_raised():
    # gradient inconsistent with the value: no step is ever accepted
    cost = CostFunction(M, value=lambda x: float(x[0]), egrad=lambda x: -np.eye(M.dim)[0])
    with pytest.raises(NoProgress):
        trust_region_minimize(cost, _point(np.random.default_rng(0)), TrustRegionConfig(max_iters=500))
