"""Riemannian trust-region minimisation on R^n x (S^1)^c.

Points are flat float arrays: the first ``n_euclid`` entries are Euclidean and
the remaining ``2 * n_circles`` entries are unit 2-vectors. The tangent space
is parametrised by the Euclidean coordinates plus one angle per circle, so the
subproblem is solved in R^(n_euclid + n_circles).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import NoProgress, RetractUndefined


@dataclass(frozen=True)
class ProductManifold:
    n_euclid: int
    n_circles: int

    @property
    def dim(self) -> int:
        return self.n_euclid + 2 * self.n_circles

    @property
    def tangent_dim(self) -> int:
        return self.n_euclid + self.n_circles

    def circles(self, x: np.ndarray) -> np.ndarray:
        return x[self.n_euclid:].reshape(self.n_circles, 2)

    def project_tangent(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        out = np.array(v, dtype=float)
        r = self.circles(x)
        vc = out[self.n_euclid:].reshape(-1, 2)
        vc -= np.sum(vc * r, axis=1, keepdims=True) * r
        return out

    def retract(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        out = np.asarray(x, dtype=float) + v
        c = out[self.n_euclid:].reshape(-1, 2)
        n = np.linalg.norm(c, axis=1, keepdims=True)
        if np.any(n < 1e-12):
            raise RetractUndefined("r + v vanished")
        c /= n
        return out

    def basis(self, x: np.ndarray) -> np.ndarray:
        """Ambient-to-tangent coordinate map B(x), shape (dim, tangent_dim)."""
        B = np.zeros((self.dim, self.tangent_dim))
        B[: self.n_euclid, : self.n_euclid] = np.eye(self.n_euclid)
        r = self.circles(x)
        for c in range(self.n_circles):
            row = self.n_euclid + 2 * c
            B[row, self.n_euclid + c] = -r[c, 1]
            B[row + 1, self.n_euclid + c] = r[c, 0]
        return B

    def tangent_coords(self, X: np.ndarray, G: np.ndarray) -> np.ndarray:
        """B(x)' g for rows of X and G (batched), shape (..., tangent_dim)."""
        ne = self.n_euclid
        R = X[..., ne:].reshape(X.shape[:-1] + (self.n_circles, 2))
        Gc = G[..., ne:].reshape(R.shape)
        ang = -R[..., 1] * Gc[..., 0] + R[..., 0] * Gc[..., 1]
        return np.concatenate([G[..., :ne], ang], axis=-1)

    def retract_batch(self, x: np.ndarray, V: np.ndarray) -> np.ndarray:
        out = x + V
        c = out[..., self.n_euclid:].reshape(out.shape[:-1] + (self.n_circles, 2))
        n = np.linalg.norm(c, axis=-1, keepdims=True)
        if np.any(n < 1e-12):
            raise RetractUndefined("r + v vanished")
        c /= n
        return out

    def normalize(self, x: np.ndarray) -> np.ndarray:
        out = np.array(x, dtype=float)
        c = out[self.n_euclid:].reshape(-1, 2)
        c /= np.linalg.norm(c, axis=1, keepdims=True)
        return out

    def is_valid(self, x: np.ndarray, tol: float = 1e-12) -> bool:
        return bool(np.all(np.abs(np.linalg.norm(self.circles(x), axis=1) - 1.0) <= tol))


@dataclass(frozen=True)
class ProductManifoldPoint:
    euclid: np.ndarray
    circles: np.ndarray  # (c, 2)

    def vector(self) -> np.ndarray:
        return np.concatenate([np.ravel(self.euclid), np.ravel(self.circles)])

    @property
    def manifold(self) -> ProductManifold:
        return ProductManifold(np.size(self.euclid), len(self.circles))


@dataclass
class CostFunction:
    """Cost with Euclidean (ambient) gradient and optional ambient Hessian.

    ``value_grad`` may be given instead of separate value and gradient
    callables to share work. ``ehess`` returns a dense ambient Hessian or a
    model of it (e.g. Gauss-Newton); without it the Riemannian Hessian is
    formed by finite differences of the Riemannian gradient.
    """

    manifold: ProductManifold
    value: Callable[[np.ndarray], float]
    egrad: Optional[Callable[[np.ndarray], np.ndarray]] = None
    ehess: Optional[Callable[[np.ndarray], np.ndarray]] = None
    value_grad: Optional[Callable[[np.ndarray], tuple]] = None
    value_grad_batch: Optional[Callable[[np.ndarray], tuple]] = None

    def vg(self, x: np.ndarray):
        if self.value_grad is not None:
            return self.value_grad(x)
        return self.value(x), self.egrad(x)

    def rgrad(self, x: np.ndarray) -> np.ndarray:
        return self.manifold.project_tangent(x, self.vg(x)[1])


@dataclass(frozen=True)
class TrustRegionConfig:
    radius: float = 1.0
    max_radius: float = 1e3
    min_radius: float = 1e-12
    tol: float = 1e-8
    max_iters: int = 200
    rho_accept: float = 0.1
    ftol_rel: float = 1e-15
    fd_step: float = 1e-7
    tcg_max_iters: Optional[int] = None
    tcg_kappa: float = 0.1
    tcg_theta: float = 1.0
    check_cauchy: bool = True     # track the Cauchy-decrease diagnostic (costs a matrix norm)


@dataclass
class TrustRegionResult:
    x: np.ndarray
    iterations: int
    gradnorm: float
    cost: float
    reason: str
    cost_history: list = field(default_factory=list)
    cauchy_ok: bool = True


def _tcg(H: np.ndarray, g: np.ndarray, radius: float, cfg: TrustRegionConfig):
    """Steihaug truncated CG for min g.e + e.H.e/2 subject to |e| <= radius."""
    n = len(g)
    eta = np.zeros(n)
    r = g.copy()
    d = -r
    rr = r @ r
    r0 = np.sqrt(rr)
    maxit = cfg.tcg_max_iters or 2 * n
    for _ in range(maxit):
        Hd = H @ d
        dHd = d @ Hd
        if dHd <= 0.0:
            return _to_boundary(eta, d, radius), "negative curvature"
        alpha = rr / dHd
        nxt = eta + alpha * d
        if np.linalg.norm(nxt) >= radius:
            return _to_boundary(eta, d, radius), "exceeded radius"
        eta = nxt
        r = r + alpha * Hd
        rr_new = r @ r
        if np.sqrt(rr_new) <= r0 * min(r0**cfg.tcg_theta, cfg.tcg_kappa):
            return eta, "converged"
        d = -r + (rr_new / rr) * d
        rr = rr_new
    return eta, "max inner"


def _to_boundary(eta, d, radius):
    a = d @ d
    b = 2 * eta @ d
    c = eta @ eta - radius * radius
    tau = (-b + np.sqrt(max(b * b - 4 * a * c, 0.0))) / (2 * a)
    return eta + tau * d


def riemannian_hessian(cost: CostFunction, x: np.ndarray, egrad: np.ndarray, fd_step: float = 1e-7) -> np.ndarray:
    """Riemannian Hessian in tangent coordinates at x."""
    M = cost.manifold
    B = M.basis(x)
    if cost.ehess is not None:
        H = B.T @ cost.ehess(x) @ B
        r = M.circles(x)
        gc = egrad[M.n_euclid:].reshape(-1, 2)
        w = np.sum(r * gc, axis=1)
        H[M.n_euclid:, M.n_euclid:] -= np.diag(w)
        return 0.5 * (H + H.T)
    g0 = B.T @ egrad
    n = M.tangent_dim
    h = fd_step * max(1.0, np.abs(x).max())
    pts = M.retract_batch(x, h * B.T)
    if cost.value_grad_batch is not None:
        grads = np.asarray(cost.value_grad_batch(pts)[1])
    else:
        grads = np.array([cost.vg(p)[1] for p in pts])
    Gt = M.tangent_coords(pts, grads)
    # angle moved by the normalising retraction is atan(h), not h
    steps = np.full(n, h)
    steps[M.n_euclid:] = np.arctan(h)
    H = ((Gt - g0) / steps[:, None]).T
    return 0.5 * (H + H.T)


def trust_region_minimize(cost: CostFunction, init: np.ndarray, cfg: TrustRegionConfig = TrustRegionConfig()) -> TrustRegionResult:
    M = cost.manifold
    x = M.normalize(np.asarray(init, dtype=float))
    f, eg = cost.vg(x)
    if not np.isfinite(f):
        raise NoProgress("cost is not finite at the initial point")
    radius = cfg.radius
    history = [f]
    cauchy_ok = True
    it = 0
    while True:
        B = M.basis(x)
        g = B.T @ eg
        gn = float(np.linalg.norm(g))
        if not np.isfinite(gn):
            raise NoProgress("gradient is not finite")
        if gn <= cfg.tol:
            return TrustRegionResult(x, it, gn, f, "gradient tolerance", history, cauchy_ok)
        if it >= cfg.max_iters:
            return TrustRegionResult(x, it, gn, f, "max iterations", history, cauchy_ok)
        H = riemannian_hessian(cost, x, eg, cfg.fd_step)
        if not np.all(np.isfinite(H)):
            raise NoProgress("Hessian is not finite")
        eta, _ = _tcg(H, g, radius, cfg)
        model_dec = -(g @ eta + 0.5 * eta @ H @ eta)
        # Cauchy decrease bound: 0.5 |g| min(radius, |g| / |H|)
        if cfg.check_cauchy:
            hn = np.linalg.norm(H, 2)
            cauchy = 0.5 * gn * min(radius, gn / hn if hn > 0 else np.inf)
            if model_dec < cauchy * (1 - 1e-9) - 1e-14 * max(1.0, abs(f)):
                cauchy_ok = False
        if model_dec <= cfg.ftol_rel * max(1.0, abs(f)):
            return TrustRegionResult(x, it, gn, f, "model decrease below precision", history, cauchy_ok)
        x_new = M.retract(x, B @ eta)
        f_new, eg_new = cost.vg(x_new)
        rho = (f - f_new) / model_dec if np.isfinite(f_new) else -np.inf
        en = np.linalg.norm(eta)
        if rho < 0.25:
            radius = 0.25 * min(radius, max(en, 1e-300))
        elif rho > 0.75 and en >= 0.99 * radius:
            radius = min(2.0 * radius, cfg.max_radius)
        if rho > cfg.rho_accept and f_new <= f:
            x, f, eg = x_new, f_new, eg_new
            history.append(f)
        it += 1
        if radius < cfg.min_radius:
            raise NoProgress(f"trust region collapsed (radius {radius:.3g}, gradnorm {gn:.3g})")


def check_gradient(cost: CostFunction, x: np.ndarray, rng: Optional[np.random.Generator] = None, n_dirs: int = 8, h: float = 1e-6) -> float:
    """Worst relative deviation between the Riemannian gradient and central differences.

    Deviations are measured relative to |grad| |xi|, the natural scale of the
    directional derivatives along tangent direction xi.
    """
    rng = rng or np.random.default_rng(0)
    M = cost.manifold
    x = M.normalize(x)
    g = cost.rgrad(x)
    worst = 0.0
    for _ in range(n_dirs):
        xi = M.project_tangent(x, rng.standard_normal(M.dim))
        xi /= np.linalg.norm(xi)
        fp = cost.vg(M.retract(x, h * xi))[0]
        fm = cost.vg(M.retract(x, -h * xi))[0]
        fd = (fp - fm) / (2 * h)
        an = g @ xi
        scale = max(np.linalg.norm(g), 1e-12)
        worst = max(worst, abs(fd - an) / scale)
    return worst
