"""EKF, particle filter and nonlinear least squares baselines.

All three use the same models as the main pipeline: the displacement
transition for positions (yaws constant) and the 13 tetrahedral angles as
measurements. Filters work on the intrinsic state ``u = (p (9), yaw (3))``
and report 15-vectors with ``r = (cos, sin)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import FilterDiverged
from ..geometry import lift_apply, tetra_angle_array, wrap_angle
from ..map_estimator import (MapCost, NoiseConfig, PriorTerm, WindowProblem, solve_window,
                             transition_covariance)
from ..manifold import TrustRegionConfig

KINDS = ("ekf", "pf", "nls")


def to_intrinsic(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.concatenate([x[..., :9], np.arctan2(x[..., 10::2], x[..., 9::2])], axis=-1)


def from_intrinsic(u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    th = u[..., 9:]
    r = np.stack([np.cos(th), np.sin(th)], axis=-1).reshape(th.shape[:-1] + (6,))
    return np.concatenate([u[..., :9], r], axis=-1)


@dataclass(frozen=True)
class GaussianState:
    """Prior for the filters in intrinsic coordinates."""

    mean: np.ndarray   # (12,)
    cov: np.ndarray    # (12, 12)


def perturbed_prior(x_true: np.ndarray, level: float, rng: np.random.Generator) -> GaussianState:
    """Truth moved by a random intrinsic offset of norm ``level * |u|``.

    The covariance is isotropic and matched to the offset: its trace equals
    the squared offset norm.
    """
    u = to_intrinsic(x_true)
    d = rng.standard_normal(12)
    mag = level * np.linalg.norm(u)
    mean = u + mag * d / np.linalg.norm(d)
    mean[9:] = wrap_angle(mean[9:])
    var = max(mag * mag / 12.0, 1e-12)
    return GaussianState(mean, var * np.eye(12))


@dataclass(frozen=True)
class BaselineConfig:
    n_particles: int = 3000
    prior_level: float = 0.1      # relative perturbation of the filter prior
    yaw_walk: float = 1e-4        # tiny process noise on the constant yaws (rad / step)
    roughening: float = 0.2
    window: int = 10              # NLS window length
    space: float = 10.0           # NLS random initialiser range (cube edge)
    trust_region: TrustRegionConfig = TrustRegionConfig(tol=1e-6, max_iters=100)


def _rot_dot(v: np.ndarray, th: np.ndarray) -> np.ndarray:
    """d/dtheta of R_z(theta) v."""
    c, s = np.cos(th), np.sin(th)
    return np.stack([-s * v[..., 0] - c * v[..., 1], c * v[..., 0] - s * v[..., 1], np.zeros_like(c)], axis=-1)


def transition_intrinsic(u: np.ndarray, dp: np.ndarray) -> np.ndarray:
    """Positions advance; yaws unchanged. ``u`` (..., 12), ``dp`` (..., 4, 3)."""
    out = np.array(u, dtype=float)
    th = out[..., 9:]
    r = np.stack([np.cos(th), np.sin(th)], axis=-1)
    p = out[..., :9].reshape(out.shape[:-1] + (3, 3))
    p = p + dp[..., 0:1, :] - lift_apply(dp[..., 1:, :], r)
    out[..., :9] = p.reshape(out.shape[:-1] + (9,))
    return out


def _check(u):
    if not np.all(np.isfinite(u)):
        raise FilterDiverged("non-finite filter state")


def run_ekf(angles: np.ndarray, dp: np.ndarray, noise: NoiseConfig, prior: GaussianState,
            cfg: BaselineConfig = BaselineConfig()) -> np.ndarray:
    """Extended Kalman filter; returns (T, 15) filtered estimates."""
    T = len(angles)
    u = prior.mean.copy()
    P = prior.cov.copy()
    Rm = noise.angle**2 * np.eye(13)
    Qp = transition_covariance(noise.disp)
    out = np.empty((T, 15))
    for k in range(T):
        if k > 0:
            d = dp[k - 1]
            F = np.eye(12)
            for c in range(3):
                F[3 * c: 3 * c + 3, 9 + c] = -_rot_dot(d[c + 1], u[9 + c])
            u = transition_intrinsic(u, d)
            Q = np.zeros((12, 12))
            Q[:9, :9] = Qp
            Q[9:, 9:] = cfg.yaw_walk**2 * np.eye(3)
            P = F @ P @ F.T + Q
        pred, Jy = tetra_angle_array(-u[:9].reshape(3, 3), jacobian=True)
        H = np.zeros((13, 12))
        H[:, :9] = -Jy
        innov = wrap_angle(angles[k] - pred)
        S = H @ P @ H.T + Rm
        K = np.linalg.solve(S, H @ P).T
        u = u + K @ innov
        u[9:] = wrap_angle(u[9:])
        IKH = np.eye(12) - K @ H
        P = IKH @ P @ IKH.T + K @ Rm @ K.T
        P = 0.5 * (P + P.T)
        _check(u)
        out[k] = from_intrinsic(u)
    return out


def systematic_resample(w: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = len(w)
    pos = (rng.random() + np.arange(n)) / n
    idx = np.searchsorted(np.cumsum(w), pos)
    return np.minimum(idx, n - 1)


def _pf_estimate(X: np.ndarray, w: np.ndarray) -> np.ndarray:
    m = w @ X[:, :9]
    yaw = np.arctan2(w @ np.sin(X[:, 9:]), w @ np.cos(X[:, 9:]))
    return from_intrinsic(np.concatenate([m, yaw]))


def run_pf(angles: np.ndarray, dp: np.ndarray, noise: NoiseConfig, prior: GaussianState,
           rng: np.random.Generator, cfg: BaselineConfig = BaselineConfig()) -> np.ndarray:
    """Bootstrap particle filter with systematic resampling and roughening."""
    T = len(angles)
    n = cfg.n_particles
    X = rng.multivariate_normal(prior.mean, prior.cov, size=n)
    w = np.full(n, 1.0 / n)
    sa, sd = noise.angle, noise.disp
    out = np.empty((T, 15))
    for k in range(T):
        if k > 0:
            d = dp[k - 1] + sd * rng.standard_normal((n, 4, 3))
            X = transition_intrinsic(X, d)
            X[:, 9:] += cfg.yaw_walk * rng.standard_normal((n, 3))
        pred = tetra_angle_array(-X[:, :9].reshape(n, 3, 3))
        res = wrap_angle(angles[k] - pred) / sa
        logw = np.log(np.maximum(w, 1e-300)) - 0.5 * np.sum(res * res, axis=1)
        logw[~np.isfinite(logw)] = -np.inf
        if not np.any(np.isfinite(logw)):
            raise FilterDiverged("all particle weights vanished")
        logw -= logw.max()
        w = np.exp(logw)
        w /= w.sum()
        out[k] = _pf_estimate(X, w)
        _check(out[k])
        if 1.0 / np.sum(w * w) < 0.5 * n:
            X = X[systematic_resample(w, rng)]
            w = np.full(n, 1.0 / n)
            # roughening keeps the static yaws from collapsing onto one particle
            spread = X.max(axis=0) - X.min(axis=0)
            X = X + cfg.roughening * spread * n ** (-1.0 / 12) * rng.standard_normal(X.shape)
            X[:, 9:] = wrap_angle(X[:, 9:])
    return out


def random_initial_state(rng: np.random.Generator, space: float) -> np.ndarray:
    """Relative positions uniform in a cube of twice the edge, yaws uniform."""
    u = np.concatenate([rng.uniform(-space, space, 9), rng.uniform(-np.pi, np.pi, 3)])
    return from_intrinsic(u)


def run_nls(angles: np.ndarray, dp: np.ndarray, noise: NoiseConfig, rng: np.random.Generator,
            cfg: BaselineConfig = BaselineConfig()) -> np.ndarray:
    """Data-term-only window fit from a random feasible start; (K, 15) estimates."""
    K = min(cfg.window, len(angles))
    prob = WindowProblem(angles[:K], dp[:K - 1], noise, PriorTerm())
    x0 = random_initial_state(rng, cfg.space)
    init = np.tile(x0, (K, 1))
    for k in range(1, K):
        init[k] = from_intrinsic(transition_intrinsic(to_intrinsic(init[k - 1]), dp[k - 1]))
    _, _, wr = solve_window(prob, init, cfg.trust_region)
    _check(wr.states)
    return wr.states


def run_baseline(kind: str, angles: np.ndarray, dp: np.ndarray, noise: NoiseConfig,
                 cfg: BaselineConfig = BaselineConfig(), rng: Optional[np.random.Generator] = None,
                 prior: Optional[GaussianState] = None, x_true0: Optional[np.ndarray] = None) -> np.ndarray:
    """Dispatch on ``kind``. Filters need ``prior`` or the true first state to perturb."""
    kind = kind.lower()
    rng = rng or np.random.default_rng(0)
    angles = np.asarray(angles, dtype=float)
    dp = np.asarray(dp, dtype=float)
    if kind == "nls":
        return run_nls(angles, dp, noise, rng, cfg)
    if kind not in KINDS:
        raise ValueError(f"unknown baseline {kind!r}")
    if prior is None:
        if x_true0 is None:
            raise ValueError("filters need a prior or the true first state")
        prior = perturbed_prior(x_true0, cfg.prior_level, rng)
    if kind == "ekf":
        return run_ekf(angles, dp, noise, prior, cfg)
    return run_pf(angles, dp, noise, prior, rng, cfg)
