import numpy as np
import pytest
from hypothesis import given, strategies as st

from relloc.errors import RellocError
from relloc.nde import MdnConfig, MdnModel, PriorBox, fit_mdn, posterior_logpdf_grad


def _box():
    x = np.concatenate([np.arange(9.0) - 4, np.tile([0.0, 1.0], 3)])
    return PriorBox.from_estimate(x, 0.01 * np.eye(15))


@given(st.lists(st.floats(-0.99, 0.99), min_size=12, max_size=12))
def test_box_intrinsic_roundtrip(frac):
    box = _box()
    u = box.center + box.half * np.array(frac)
    assert np.allclose(box.to_intrinsic(box.from_intrinsic(u)), u, atol=1e-9)
    assert box.contains(box.from_intrinsic(u))


def test_box_bounds_contain_samples(rng):
    box = _box()
    S = box.sample(rng, 500)
    assert np.all(S >= box.lower - 1e-9) and np.all(S <= box.upper + 1e-9)


def test_mdn_learns_shifted_gaussian(rng):
    x = rng.normal(size=(2000, 2))
    y = x + 0.1 * rng.normal(size=(2000, 2))
    m = fit_mdn(x, y, MdnConfig(max_epochs=80, patience=20, hidden=16, n_mix=2))
    xt = rng.normal(size=(500, 2))
    yt = xt + 0.1 * rng.normal(size=(500, 2))
    nll = -np.mean(m.log_prob(yt, xt))
    exact = -np.mean(np.sum(-0.5 * ((yt - xt) / 0.1) ** 2 - np.log(0.1 * np.sqrt(2 * np.pi)), axis=1))
    assert nll < exact + 0.3


@pytest.mark.parametrize("n_out,residual", [(2, False), (3, True)])
def test_mdn_input_gradient(rng, n_out, residual):
    m = MdnModel(3, n_out, MdnConfig(hidden=8, n_mix=3, residual=residual), rng=rng)
    x = rng.normal(size=(4, 3))
    y = rng.normal(size=(4, n_out))
    ll, g = m.grad_log_prob_x(y, x)
    h = 1e-6
    for c in range(3):
        e = np.zeros(3)
        e[c] = h
        fd = (m.log_prob(y, x + e) - m.log_prob(y, x - e)) / (2 * h)
        assert np.allclose(g[:, c], fd, atol=1e-6)
    assert np.allclose(ll, m.log_prob(y, x))


def test_serialization_roundtrip(tmp_path, rng):
    m = MdnModel(12, 12, MdnConfig(hidden=6), rng=rng)
    path = tmp_path / "m.bin"
    m.save(path, extra={"tag": 1})
    m2, extra = MdnModel.load(path)
    x, y = rng.normal(size=(5, 12)), rng.normal(size=(5, 12))
    assert extra == {"tag": 1}
    assert np.array_equal(m.log_prob(y, x), m2.log_prob(y, x))
    with pytest.raises(RellocError):
        MdnModel.from_bytes(b"garbage" * 4)


def test_posterior_outside_box(rng):
    box = _box()
    m = MdnModel(12, 12, MdnConfig(hidden=6), rng=rng)
    m.set_normalization(box.center, box.half, box.center, box.half)
    x0 = box.from_intrinsic(box.center)
    inside = posterior_logpdf_grad(m, box, x0, x0)
    assert np.isfinite(inside.logpdf) and not inside.outside
    far = x0.copy()
    far[0] += 10.0
    assert posterior_logpdf_grad(m, box, x0, far).outside
