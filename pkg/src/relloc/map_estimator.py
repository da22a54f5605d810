"""Sliding-window maximum a posteriori estimation with marginalisation.

A window holds K instants. The decision vector is
``[p(0), ..., p(K-1), r]``: 9 positions per instant followed by the three
orientation pairs, which are shared by every instant because yaws do not
change between instants. Data terms are whitened residuals:

* angle residuals ``wrap(measured - predicted) / sigma_angle`` (13 per instant)
* transition residuals ``L^-1 (p(k+1) - f(p(k), r, dp(k)))`` where
  ``L L' = P'`` is the displacement-noise covariance of the transition.

The first instant of the window additionally carries a prior term. The
first window uses the NDE posterior (or a Gaussian); later windows use the
quadratic prior left behind by marginalising the instants that slid out.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import NoProgress, RellocError, SingularMarginalBlock
from .geometry import lift_apply, tetra_angle_array, wrap_angle
from .linear import transition_positions
from .manifold import CostFunction, ProductManifold, TrustRegionConfig, trust_region_minimize
from .nde import MdnConfig, NdePriorModel, SimulationContext, build_nde_prior
from .wtls import Z95, wtls_from_measurements

LOG2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class NoiseConfig:
    sigma_angle: float
    sigma_disp: float
    floor: float = 1e-6

    def __post_init__(self):
        if self.sigma_angle < 0 or self.sigma_disp < 0:
            raise ValueError("noise levels must be non-negative")

    @property
    def angle(self) -> float:
        return max(self.sigma_angle, self.floor)

    @property
    def disp(self) -> float:
        return max(self.sigma_disp, self.floor)


# ---------------------------------------------------------------- helpers

def yaw_angles(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=float).reshape(-1, 2)
    return np.arctan2(r[:, 1], r[:, 0])


def to_intrinsic(p0: np.ndarray, r: np.ndarray, theta_ref: np.ndarray) -> np.ndarray:
    """(positions, yaw offsets from ``theta_ref`` wrapped to [-pi, pi))."""
    return np.concatenate([p0, theta_ref + wrap_angle(yaw_angles(r) - theta_ref)])


def intrinsic_jacobian(r: np.ndarray) -> np.ndarray:
    """d(intrinsic)/d(p0, r), shape (12, 15)."""
    r = np.asarray(r, dtype=float).reshape(3, 2)
    J = np.zeros((12, 15))
    J[:9, :9] = np.eye(9)
    n2 = np.sum(r * r, axis=1)
    for c in range(3):
        J[9 + c, 9 + 2 * c] = -r[c, 1] / n2[c]
        J[9 + c, 10 + 2 * c] = r[c, 0] / n2[c]
    return J


def circular_mean(r: np.ndarray) -> np.ndarray:
    """Mean direction of (n, 3, 2) orientation pairs, shape (3, 2)."""
    m = np.asarray(r, dtype=float).reshape(-1, 3, 2)
    m = m / np.linalg.norm(m, axis=2, keepdims=True)
    m = m.sum(axis=0)
    n = np.linalg.norm(m, axis=1, keepdims=True)
    return np.where(n > 1e-12, m / np.maximum(n, 1e-300), np.array([1.0, 0.0]))


def transition_covariance(sigma_disp: float) -> np.ndarray:
    """Covariance of p(k+1) - f(p(k), r, dp~(k)) for unit r: s^2 (ones(3,3) kron I3 + I9)."""
    return sigma_disp**2 * (np.kron(np.ones((3, 3)), np.eye(3)) + np.eye(9))


# ---------------------------------------------------------------- prior terms

class PriorTerm:
    """Negative log prior on (p0, r) with value, ambient gradient and Hessian."""

    kind = "none"

    def evaluate(self, p0: np.ndarray, r: np.ndarray):
        return 0.0, np.zeros(15), np.zeros((15, 15))


class GaussianPrior(PriorTerm):
    """Gaussian on the intrinsic coordinates (positions and yaw angles)."""

    kind = "gaussian"

    def __init__(self, mean: np.ndarray, cov_intrinsic: np.ndarray):
        mean = np.asarray(mean, dtype=float)
        self.theta_ref = yaw_angles(mean[9:])
        self.mean = to_intrinsic(mean[:9], mean[9:], self.theta_ref)
        cov = np.asarray(cov_intrinsic, dtype=float)
        self.info = np.linalg.inv(0.5 * (cov + cov.T))

    @classmethod
    def from_crlb(cls, x: np.ndarray, crlb: np.ndarray, floor: float = 1e-12) -> "GaussianPrior":
        """Prior N(x, CRLB) with the CRLB mapped to intrinsic coordinates."""
        J = intrinsic_jacobian(np.asarray(x)[9:])
        cov = J @ crlb @ J.T + floor * np.eye(12)
        return cls(x, cov)

    def evaluate(self, p0, r):
        u = to_intrinsic(p0, r, self.theta_ref)
        e = u - self.mean
        e[9:] = wrap_angle(e[9:])
        J = intrinsic_jacobian(r)
        ge = self.info @ e
        return 0.5 * e @ ge, J.T @ ge, J.T @ self.info @ J


class NdePrior(PriorTerm):
    """-log q(x_check0 | x) plus a quadratic wall outside the prior box.

    The box itself assigns zero density outside; inside the optimiser the hard
    edge is replaced by a C1 penalty scaled by the box standard deviations so
    that trial points just outside the box stay comparable.
    """

    kind = "nde"

    def __init__(self, nde: NdePriorModel, fd_step: float = 1e-5):
        self.nde = nde
        self.fd_step = fd_step
        self.y = nde.box.to_intrinsic(nde.x_check0)[None, :]

    def _intrinsic_terms(self, U: np.ndarray):
        box = self.nde.box
        # the network is only trained inside the box: evaluate it at the
        # clamped point and let the wall carry the exterior
        lo, hi = box.center - box.half, box.center + box.half
        Uc = np.clip(U, lo, hi)
        ll, du = self.nde.model.grad_log_prob_x(self.y, Uc)
        du = np.where((U > lo) & (U < hi), du, 0.0)
        scale = box.half / Z95
        over = np.maximum(np.abs(U - box.center) - box.half, 0.0) / scale
        pen = 0.5 * np.sum(over * over, axis=1)
        dpen = over / scale * np.sign(U - box.center)
        return -ll + pen, -du + dpen

    def evaluate(self, p0, r):
        box = self.nde.box
        u = to_intrinsic(p0, r, box.theta_center)
        steps = self.fd_step * np.maximum(box.half, 1e-9)
        U = np.vstack([u, u + np.diag(steps)])
        f, G = self._intrinsic_terms(U)
        Hu = (G[1:] - G[0]) / steps[:, None]
        Hu = 0.5 * (Hu + Hu.T)
        J = intrinsic_jacobian(r)
        return float(f[0]), J.T @ G[0], J.T @ Hu @ J


class MarginalPrior(PriorTerm):
    """Quadratic prior J' d + d' H d / 2 in the tangent coordinates at a linearisation point."""

    kind = "marginal"

    def __init__(self, x_lin: np.ndarray, J: np.ndarray, H: np.ndarray):
        self.x_lin = np.asarray(x_lin, dtype=float)
        self.theta_lin = yaw_angles(self.x_lin[9:])
        self.J = np.asarray(J, dtype=float)
        self.H = 0.5 * (H + H.T)

    def evaluate(self, p0, r):
        d = np.concatenate([p0 - self.x_lin[:9], wrap_angle(yaw_angles(r) - self.theta_lin)])
        T = intrinsic_jacobian(r)
        g = self.J + self.H @ d
        return float(self.J @ d + 0.5 * d @ self.H @ d), T.T @ g, T.T @ self.H @ T


# ---------------------------------------------------------------- window cost

@dataclass
class WindowProblem:
    angles: np.ndarray      # (K, 13)
    dp: np.ndarray          # (K - 1, 4, 3)
    noise: NoiseConfig
    prior: PriorTerm = field(default_factory=PriorTerm)

    @property
    def K(self) -> int:
        return len(self.angles)


class MapCost:
    def __init__(self, prob: WindowProblem):
        self.prob = prob
        self.K = prob.K
        self.n = 9 * self.K + 6
        self.manifold = ProductManifold(9 * self.K, 3)
        L = np.linalg.cholesky(transition_covariance(prob.noise.disp))
        self.Linv = np.linalg.inv(L)
        self.sa = prob.noise.angle

    def split(self, v):
        return v[: 9 * self.K].reshape(self.K, 3, 3), v[9 * self.K:].reshape(3, 2)

    def residuals(self, v: np.ndarray, angle_rows=None, trans_rows=None):
        """Whitened residuals and their Jacobian w.r.t. the ambient decision vector."""
        K = self.K
        p, r = self.split(v)
        ka = np.arange(K) if angle_rows is None else np.asarray(angle_rows, dtype=int)
        kt = np.arange(K - 1) if trans_rows is None else np.asarray(trans_rows, dtype=int)
        pred, Jy = tetra_angle_array(-p[ka], jacobian=True)
        ra = (wrap_angle(self.prob.angles[ka] - pred) / self.sa).ravel()
        na, nt = 13 * len(ka), 9 * len(kt)
        Jr = np.zeros((na + nt, self.n))
        for q, k in enumerate(ka):
            # d(res)/dp = -(1/s) d(pred)/dp = (1/s) d(pred)/dP since P = -p
            Jr[13 * q: 13 * q + 13, 9 * k: 9 * k + 9] = Jy[q] / self.sa
        rt = np.empty(nt)
        for q, k in enumerate(kt):
            dpk = self.prob.dp[k]
            e = (p[k + 1] - transition_positions(p[k], r, dpk)).ravel()
            rows = slice(na + 9 * q, na + 9 * q + 9)
            rt[9 * q: 9 * q + 9] = self.Linv @ e
            Jr[rows, 9 * (k + 1): 9 * (k + 1) + 9] = self.Linv
            Jr[rows, 9 * k: 9 * k + 9] = -self.Linv
            De = np.zeros((9, 6))
            for c in range(3):
                d = dpk[c + 1]
                De[3 * c: 3 * c + 2, 2 * c: 2 * c + 2] = [[d[0], -d[1]], [d[1], d[0]]]
            Jr[rows, 9 * K:] = self.Linv @ De
        return np.concatenate([ra, rt]), Jr

    def _prior(self, v):
        p, r = self.split(v)
        return self.prob.prior.evaluate(p[0].ravel(), r.ravel())

    def value_grad(self, v):
        rho, Jr = self.residuals(v)
        pf, pg, _ = self._prior(v)
        g = Jr.T @ rho
        g[:9] += pg[:9]
        g[9 * self.K:] += pg[9:]
        return 0.5 * rho @ rho + pf, g

    def value(self, v):
        return self.value_grad(v)[0]

    def hessian(self, v):
        _, Jr = self.residuals(v)
        _, _, ph = self._prior(v)
        H = Jr.T @ Jr
        idx = np.r_[0:9, 9 * self.K: 9 * self.K + 6]
        H[np.ix_(idx, idx)] += ph
        return H

    def cost_function(self) -> CostFunction:
        return CostFunction(self.manifold, value=self.value, value_grad=self.value_grad, ehess=self.hessian)

    def pack(self, p: np.ndarray, r: np.ndarray) -> np.ndarray:
        return np.concatenate([np.ravel(p), np.ravel(r)])

    def unpack_states(self, v) -> np.ndarray:
        """(K, 15) states from a decision vector."""
        p, r = self.split(v)
        return np.concatenate([p.reshape(self.K, 9), np.tile(r.ravel(), (self.K, 1))], axis=1)


@dataclass
class Marginal:
    x_lin: np.ndarray
    J: np.ndarray
    H: np.ndarray
    regularized: bool = False

    def prior(self) -> MarginalPrior:
        return MarginalPrior(self.x_lin, self.J, self.H)


def schur_marginal(g: np.ndarray, H: np.ndarray, drop: np.ndarray, keep: np.ndarray, cond_limit: float = 1e12):
    """Eliminate ``drop`` coordinates from the quadratic g' d + d' H d / 2."""
    Hmm = H[np.ix_(drop, drop)]
    Hrm = H[np.ix_(keep, drop)]
    reg = False
    if np.linalg.cond(Hmm) > cond_limit:
        Hmm = Hmm + 1e-9 * max(np.trace(Hmm) / len(drop), 1.0) * np.eye(len(drop))
        reg = True
    try:
        S = np.linalg.solve(Hmm, np.column_stack([g[drop], Hrm.T]))
    except np.linalg.LinAlgError as exc:
        raise SingularMarginalBlock("marginalised block is singular") from exc
    Js = g[keep] - Hrm @ S[:, 0]
    Hs = H[np.ix_(keep, keep)] - Hrm @ S[:, 1:]
    return Js, 0.5 * (Hs + Hs.T), reg


def marginalize_window(cost: MapCost, v: np.ndarray, k_m: int) -> Marginal:
    """Marginalise instants 0..k_m-1 of a solved window onto (p(k_m), r)."""
    K = cost.K
    if not 1 <= k_m < K:
        raise ValueError("k_m must be in [1, K)")
    rho, Jr = cost.residuals(v, angle_rows=range(k_m), trans_rows=range(k_m))
    p, r = cost.split(v)
    # tangent coordinates: positions of instants 0..k_m and one yaw per circle
    cols = np.r_[0: 9 * (k_m + 1)]
    T = np.zeros((6, 3))
    for c in range(3):
        T[2 * c: 2 * c + 2, c] = (-r[c, 1], r[c, 0])
    Jt = np.hstack([Jr[:, cols], Jr[:, 9 * K:] @ T])
    g = Jt.T @ rho
    H = Jt.T @ Jt
    pf, pg, ph = cost._prior(v)
    if cost.prob.prior.kind != "none":
        n = Jt.shape[1]
        B = np.zeros((15, n))
        B[:9, :9] = np.eye(9)
        B[9:, n - 3:] = T
        g = g + B.T @ pg
        H = H + B.T @ ph @ B
    n = Jt.shape[1]
    drop = np.arange(9 * k_m)
    keep = np.r_[9 * k_m: n]
    Js, Hs, reg = schur_marginal(g, H, drop, keep)
    x_lin = np.concatenate([p[k_m].ravel(), r.ravel()])
    return Marginal(x_lin, Js, Hs, reg)


# ---------------------------------------------------------------- driver

@dataclass
class SlidingWindowConfig:
    window: int = 10
    drop: int = 5
    prior: str = "nde"            # nde | gaussian | none
    nde_samples: int = 3000
    nde_repeats: int = 10
    nde_pilot: int = 20
    mdn: MdnConfig = field(default_factory=MdnConfig)
    trust_region: TrustRegionConfig = field(default_factory=lambda: TrustRegionConfig(tol=1e-6, max_iters=100))
    max_range: Optional[float] = None   # sensing range used to reject runaway WTLS solutions
    seed: int = 0

    def __post_init__(self):
        if self.window < 3:
            raise ValueError("window must hold at least 3 instants")
        if not 1 <= self.drop < self.window:
            raise ValueError("drop must be in [1, window)")
        if self.prior not in ("nde", "gaussian", "none"):
            raise ValueError(f"unknown prior {self.prior!r}")


@dataclass
class WindowResult:
    start: int
    states: np.ndarray       # (K, 15)
    iterations: int
    reason: str
    cost: float
    seconds: float
    prior_kind: str
    flags: list = field(default_factory=list)


@dataclass
class SlidingWindowResult:
    estimates: np.ndarray    # (n_covered, 15) latest estimate per instant
    windows: list
    x_check0: Optional[np.ndarray] = None
    nde: Optional[NdePriorModel] = None
    initial: Optional[np.ndarray] = None   # (K, 15) start of the first window


def solve_window(prob: WindowProblem, init_states: np.ndarray, cfg: TrustRegionConfig = TrustRegionConfig(tol=1e-6, max_iters=100),
                 init_r: Optional[np.ndarray] = None):
    """Minimise the window cost starting from per-instant states (K, 15)."""
    cost = MapCost(prob)
    init_states = np.asarray(init_states, dtype=float)
    r0 = circular_mean(init_states[:, 9:]) if init_r is None else np.asarray(init_r, dtype=float).reshape(3, 2)
    v0 = cost.pack(init_states[:, :9], r0)
    t0 = time.perf_counter()
    flags = []
    try:
        res = trust_region_minimize(cost.cost_function(), v0, cfg)
        v, its, reason, f = res.x, res.iterations, res.reason, res.cost
    except NoProgress as exc:
        flags.append("no_progress")
        v, its, reason, f = cost.manifold.normalize(v0), cfg.max_iters, str(exc), cost.value(v0)
    return cost, v, WindowResult(0, cost.unpack_states(v), its, reason, f, time.perf_counter() - t0, prob.prior.kind, flags)


def wtls_initial_states(angles: np.ndarray, dp: np.ndarray, noise: NoiseConfig, d: int = 3,
                        max_range: Optional[float] = None, count: Optional[int] = None):
    """Per-instant WTLS estimates; instants without d instants of data are propagated."""
    T = len(angles) if count is None else min(count, len(angles))
    states = []
    ests = []
    first_est = None
    for k in range(T):
        if k + d <= len(angles):
            try:
                est = wtls_from_measurements(angles[k: k + d], dp[k: k + d - 1], noise.sigma_angle, noise.sigma_disp,
                                             floor=noise.floor, max_range=max_range)
                if "out_of_range" not in est.flags or not states:
                    states.append(est.x)
                    ests.append(est if "out_of_range" not in est.flags else None)
                    first_est = first_est or est
                    continue
            except RellocError:
                pass
        if not states:
            raise RellocError("no WTLS estimate available for the first instant")
        prev = states[-1]
        x = prev.copy()
        x[:9] = transition_positions(prev[:9].reshape(3, 3), prev[9:].reshape(3, 2), dp[k - 1]).ravel()
        states.append(x)
        ests.append(None)
    if ests and ests[0] is None and first_est is not None:
        ests[0] = first_est
    return np.array(states), ests


def propagate_trajectory(x: np.ndarray, k0: int, dp: np.ndarray, K: int) -> np.ndarray:
    """States (K, 15) obtained by moving the state at instant k0 forwards and backwards with dp."""
    r = np.asarray(x, dtype=float)[9:].reshape(3, 2)
    out = np.empty((K, 15))
    out[:, 9:] = x[9:]
    out[k0, :9] = x[:9]
    for k in range(k0, K - 1):
        out[k + 1, :9] = transition_positions(out[k, :9].reshape(3, 3), r, dp[k]).ravel()
    for k in range(k0, 0, -1):
        # inverse of the transition: p(k-1) = p(k) - dp_i + lift(dp_c) r
        p = out[k, :9].reshape(3, 3)
        out[k - 1, :9] = (p - dp[k - 1][0:1] + lift_apply(dp[k - 1][1:], r)).ravel()
    return out


def select_initial_trajectory(prob: WindowProblem, per_instant: np.ndarray, available: Sequence[int]):
    """Lowest data-cost start among the per-instant estimates and their propagations.

    Candidates: the raw per-instant estimates (with the circular-mean
    orientation) and, for every instant with its own estimate, the trajectory
    propagated from that instant alone.
    """
    data = MapCost(WindowProblem(prob.angles, prob.dp, prob.noise, PriorTerm()))
    K = prob.K
    cands = []
    r_mean = circular_mean(per_instant[list(available)][:, 9:] if len(available) else per_instant[:, 9:])
    cands.append(data.pack(per_instant[:, :9], r_mean))
    for k in available:
        if k < K:
            tr = propagate_trajectory(per_instant[k], k, prob.dp, K)
            cands.append(data.pack(tr[:, :9], tr[0, 9:]))
    vals = [data.value(data.manifold.normalize(c)) for c in cands]
    best = int(np.nanargmin(vals))
    return data.unpack_states(data.manifold.normalize(cands[best])), best


def candidate_spread(x0: np.ndarray, per_instant: np.ndarray, dp: np.ndarray, available: Sequence[int]) -> Optional[np.ndarray]:
    """RMS deviation (12 intrinsic) from x0 of the per-instant estimates carried back to instant 0.

    Disagreement between independent estimates is a direct measure of how far
    off the start may be; it catches failures the local CRLB cannot see.
    """
    theta0 = yaw_angles(x0[9:].reshape(3, 2))
    u0 = to_intrinsic(x0[:9], x0[9:].reshape(3, 2), theta0)
    devs = []
    for k in available:
        if k < len(per_instant):
            x = propagate_trajectory(per_instant[k], k, dp, k + 1)[0]
            devs.append(to_intrinsic(x[:9], x[9:].reshape(3, 2), theta0) - u0)
    if len(devs) < 2:
        return None
    return np.sqrt(np.mean(np.square(devs), axis=0))


def run_sliding_window(angles: np.ndarray, dp: np.ndarray, noise: NoiseConfig, cfg: SlidingWindowConfig = SlidingWindowConfig(),
                       rng: Optional[np.random.Generator] = None, first_prior: Optional[PriorTerm] = None,
                       init_states: Optional[np.ndarray] = None) -> SlidingWindowResult:
    """Process a measurement sequence with overlapping windows.

    ``angles`` (T, 13) and ``dp`` (T - 1, 4, 3) for one tetrahedron. Windows
    start at 0, drop, 2 drop, ... while they fit into T instants.

    ``init_states`` (K, 15) replaces the WTLS initialisation of the first
    window; it then needs ``first_prior`` unless the configured prior is "none".
    """
    angles = np.asarray(angles, dtype=float)
    dp = np.asarray(dp, dtype=float)
    T = len(angles)
    K = cfg.window
    if T < K:
        raise ValueError(f"need at least {K} instants, got {T}")
    rng = rng or np.random.default_rng(cfg.seed)
    latest = np.zeros((T, 15))
    if init_states is not None:
        if first_prior is None and cfg.prior != "none":
            raise ValueError("explicit initial states need an explicit first prior")
        latest[:K] = np.asarray(init_states, dtype=float)[:K]
    else:
        init, ests = wtls_initial_states(angles, dp, noise, max_range=cfg.max_range, count=K)
        available = [k for k, e in enumerate(ests) if e is not None]
        latest[:K], _ = select_initial_trajectory(WindowProblem(angles[:K], dp[:K - 1], noise, PriorTerm()), init, available)
    # the prior is anchored at the data-selected start, which is never worse
    # than the raw instant-0 estimate in data cost
    x_check0 = latest[0].copy()
    initial = latest[:K].copy()
    nde_model = None
    prior = first_prior
    if prior is None:
        if cfg.prior == "none":
            prior = PriorTerm()
        else:
            crlb = ests[0].crlb
            if cfg.prior == "gaussian":
                prior = GaussianPrior.from_crlb(x_check0, crlb)
            else:
                ctx = SimulationContext(dp[:2], noise.sigma_angle, noise.sigma_disp, max_range=cfg.max_range)
                nde_model = build_nde_prior(x_check0, crlb, ctx, cfg.nde_samples, cfg.nde_repeats, rng, cfg.mdn, cfg.nde_pilot,
                                            spread=candidate_spread(x_check0, init, dp, available))
                prior = NdePrior(nde_model)
    windows = []
    r_prev = None
    start = 0
    covered = 0
    while start + K <= T:
        prob = WindowProblem(angles[start: start + K], dp[start: start + K - 1], noise, prior)
        x0 = latest[start: start + K].copy()
        cost, v, wr = solve_window(prob, x0, cfg.trust_region, init_r=r_prev if start else latest[0, 9:])
        wr.start = start
        windows.append(wr)
        latest[start: start + K] = wr.states
        covered = start + K
        r_prev = wr.states[0, 9:]
        if start + cfg.drop + K > T:
            break
        marg = marginalize_window(cost, v, cfg.drop)
        if marg.regularized:
            wr.flags.append("regularized_marginal")
        prior = marg.prior()
        # seed the instants entering the next window by propagation
        for k in range(start + K, min(start + cfg.drop + K, T)):
            prev = latest[k - 1]
            latest[k] = prev
            latest[k, :9] = transition_positions(prev[:9].reshape(3, 3), prev[9:].reshape(3, 2), dp[k - 1]).ravel()
        start += cfg.drop
    return SlidingWindowResult(latest[:covered], windows, x_check0, nde_model, initial)


# ---------------------------------------------------------------- functional aliases

def transition_apply(x: np.ndarray, dp: np.ndarray) -> np.ndarray:
    """Positions advance by the displacement model; orientations are unchanged."""
    x = np.asarray(x, dtype=float)
    out = x.copy()
    out[:9] = transition_positions(x[:9].reshape(3, 3), x[9:].reshape(3, 2), np.asarray(dp, dtype=float)).ravel()
    return out


def measurement_predict(x: np.ndarray) -> np.ndarray:
    """The 13 angles implied by a relative state."""
    from .geometry import check_configuration

    P = -np.asarray(x, dtype=float)[:9].reshape(3, 3)
    check_configuration(P)
    return tetra_angle_array(P)


def build_map_cost(win: WindowProblem) -> CostFunction:
    return MapCost(win).cost_function()


def marginalize(J: np.ndarray, H: np.ndarray, n_drop: int):
    """Schur reduction of (J, H) eliminating the first ``n_drop`` coordinates.

    Returns ``(J_s, H_s, regularized)``.
    """
    J = np.asarray(J, dtype=float)
    H = np.asarray(H, dtype=float)
    if n_drop == 0:
        return J.copy(), 0.5 * (H + H.T), False
    n = len(J)
    return schur_marginal(J, H, np.arange(n_drop), np.arange(n_drop, n))


run_sliding_windows = run_sliding_window
