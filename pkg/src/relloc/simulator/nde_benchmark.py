"""Density-estimation benchmark with an analytically known posterior.

The state is x = (p (3), theta) with a Gaussian prior N(0, P1) truncated to a
cube of edge ``space`` and theta in [-pi, pi). Estimates follow the mixture
p(x_check | x) = 0.5 N(x, P2) + 0.5 N(x, P3). An MDN fitted to simulated
pairs (x, x_check) gives a learned posterior q(x | x_check_0) that is compared
with random-walk Metropolis samples of the exact posterior.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import logsumexp
from scipy.stats import multivariate_normal

from ..nde import MdnConfig, MdnModel, fit_mdn


def random_spd(rng: np.random.Generator, d: int, lo: float, hi: float) -> np.ndarray:
    """Random rotation of a diagonal with eigenvalues uniform in [lo, hi]."""
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    return (Q * rng.uniform(lo, hi, d)) @ Q.T


@dataclass
class BenchmarkProblem:
    P1: np.ndarray
    P2: np.ndarray
    P3: np.ndarray
    space: float = 10.0
    x_check0: np.ndarray = field(default_factory=lambda: np.zeros(4))

    @classmethod
    def random(cls, seed: int = 0, space: float = 10.0) -> "BenchmarkProblem":
        rng = np.random.default_rng(seed)
        return cls(random_spd(rng, 4, 1.0, 6.0), random_spd(rng, 4, 0.2, 1.5), random_spd(rng, 4, 0.05, 0.5), space)

    @property
    def lower(self) -> np.ndarray:
        h = 0.5 * self.space
        return np.array([-h, -h, -h, -np.pi])

    @property
    def upper(self) -> np.ndarray:
        h = 0.5 * self.space
        return np.array([h, h, h, np.pi])

    def inside(self, x: np.ndarray) -> np.ndarray:
        return np.all((x >= self.lower) & (x < self.upper), axis=-1)

    def sample_prior(self, rng: np.random.Generator, n: int) -> np.ndarray:
        out = np.empty((0, 4))
        L = np.linalg.cholesky(self.P1)
        while len(out) < n:
            z = rng.standard_normal((2 * n, 4)) @ L.T
            out = np.vstack([out, z[self.inside(z)]])
        return out[:n]

    def sample_estimate(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        n = len(x)
        L2, L3 = np.linalg.cholesky(self.P2), np.linalg.cholesky(self.P3)
        pick = rng.random(n) < 0.5
        e = rng.standard_normal((n, 4))
        return x + np.where(pick[:, None], e @ L2.T, e @ L3.T)

    def log_likelihood(self, y: np.ndarray, x: np.ndarray) -> np.ndarray:
        """log p(y | x) row by row (either argument may be a single vector)."""
        d = np.atleast_2d(y) - np.atleast_2d(x)
        a = np.atleast_1d(multivariate_normal(np.zeros(4), self.P2).logpdf(d))
        b = np.atleast_1d(multivariate_normal(np.zeros(4), self.P3).logpdf(d))
        return logsumexp(np.stack([a, b]), axis=0) + np.log(0.5)

    def log_prior(self, x: np.ndarray) -> np.ndarray:
        lp = np.atleast_1d(multivariate_normal(np.zeros(4), self.P1).logpdf(np.atleast_2d(x)))
        return np.where(self.inside(np.atleast_2d(x)), lp, -np.inf)

    def log_posterior(self, x: np.ndarray) -> np.ndarray:
        return self.log_likelihood(self.x_check0, x) + self.log_prior(x)


def training_pairs(prob: BenchmarkProblem, s: int, rng: np.random.Generator):
    x = prob.sample_prior(rng, s)
    return x, prob.sample_estimate(x, rng)


def learned_log_posterior(model: MdnModel, prob: BenchmarkProblem) -> Callable:
    def f(x):
        x = np.atleast_2d(x)
        out = np.full(len(x), -np.inf)
        ok = prob.inside(x)
        if np.any(ok):
            out[ok] = model.log_prob(np.broadcast_to(prob.x_check0, (ok.sum(), 4)), x[ok]) + prob.log_prior(x[ok])
        return out
    return f


def metropolis(logp: Callable, x0: np.ndarray, n_steps: int, step: np.ndarray, rng: np.random.Generator,
               burn: int = 0) -> tuple[np.ndarray, float]:
    """Vectorised random-walk Metropolis over independent chains started at the rows of x0.

    Returns the post-burn-in samples stacked over chains, and the acceptance rate.
    """
    x = np.array(x0, dtype=float)
    lp = logp(x)
    keep = []
    acc = 0
    for t in range(n_steps):
        prop = x + step * rng.standard_normal(x.shape)
        lq = logp(prop)
        ok = np.log(rng.random(len(x))) < lq - lp
        x[ok] = prop[ok]
        lp[ok] = lq[ok]
        acc += ok.sum()
        if t >= burn:
            keep.append(x.copy())
    return np.concatenate(keep), acc / (n_steps * len(x))


def marginal_histograms(samples: np.ndarray, edges: Sequence[np.ndarray]) -> list:
    return [np.histogram(samples[:, c], bins=edges[c])[0] / len(samples) for c in range(samples.shape[1])]


def tv_distances(a: np.ndarray, b: np.ndarray, bins: int = 40) -> np.ndarray:
    """Per-marginal total-variation distance between two sample sets on shared bins."""
    lo = np.minimum(a.min(0), b.min(0))
    hi = np.maximum(a.max(0), b.max(0))
    edges = [np.linspace(lo[c], hi[c], bins + 1) for c in range(a.shape[1])]
    ha, hb = marginal_histograms(a, edges), marginal_histograms(b, edges)
    return np.array([0.5 * np.abs(p - q).sum() for p, q in zip(ha, hb)])


@dataclass(frozen=True)
class BenchmarkConfig:
    seed: int = 0
    space: float = 10.0
    samples: int = 3000
    mdn: MdnConfig = MdnConfig(max_epochs=300, patience=30, residual=True)
    chains: int = 400
    steps: int = 2500
    burn: int = 500
    bins: int = 40
    curve_sizes: tuple = (250, 500, 1000, 2000, 3000)
    test_size: int = 4000


@dataclass
class BenchmarkResult:
    tv: np.ndarray              # per marginal
    acceptance: tuple           # (oracle, learned)
    oracle: np.ndarray          # MCMC samples of the exact posterior
    learned: np.ndarray         # MCMC samples of the learned posterior
    model: MdnModel
    curve: list = field(default_factory=list)   # (s, held-out NLL)
    mode_in_68: Optional[np.ndarray] = None

    @property
    def max_tv(self) -> float:
        return float(self.tv.max())

    def plateau(self, at: int = 1000, tol: float = 0.05) -> bool:
        """Held-out NLL at ``at`` samples is within ``tol`` nats per dimension of the best one."""
        d = dict(self.curve)
        return bool(d and at in d and d[at] - min(d.values()) <= tol * self.oracle.shape[1])


def fit_benchmark_mdn(x: np.ndarray, y: np.ndarray, cfg: MdnConfig) -> MdnModel:
    norm = (x.mean(0), x.std(0))
    return fit_mdn(x, y, cfg, in_norm=norm, out_norm=norm)


def heldout_nll(model: MdnModel, x: np.ndarray, y: np.ndarray) -> float:
    return float(-np.mean(model.log_prob(y, x)))


def learning_curve(prob: BenchmarkProblem, sizes: Sequence[int], cfg: MdnConfig, rng: np.random.Generator,
                   test_size: int = 4000) -> list:
    """Held-out NLL of models trained on growing prefixes of one sample stream."""
    xt, yt = training_pairs(prob, test_size, rng)
    X, Y = training_pairs(prob, max(sizes), rng)
    return [(int(s), heldout_nll(fit_benchmark_mdn(X[:s], Y[:s], cfg), xt, yt)) for s in sizes]


def run_benchmark(cfg: BenchmarkConfig = BenchmarkConfig(), model: Optional[MdnModel] = None,
                  with_curve: bool = True) -> BenchmarkResult:
    prob = BenchmarkProblem.random(cfg.seed, cfg.space)
    ss = np.random.SeedSequence(cfg.seed)
    r_train, r_curve, r_oracle, r_learned = (np.random.default_rng(s) for s in ss.spawn(4))
    if model is None:
        model = fit_benchmark_mdn(*training_pairs(prob, cfg.samples, r_train), cfg.mdn)
    start = prob.sample_prior(r_oracle, cfg.chains)
    step = 0.5 * np.sqrt(np.diag(prob.P3))
    oracle, a0 = metropolis(prob.log_posterior, start, cfg.steps, step, r_oracle, cfg.burn)
    learned, a1 = metropolis(learned_log_posterior(model, prob), start, cfg.steps, step, r_learned, cfg.burn)
    tv = tv_distances(oracle, learned, cfg.bins)
    # mode of the learned posterior among its samples vs the oracle's 68% interval
    lq = learned_log_posterior(model, prob)(learned[:: max(1, len(learned) // 20000)])
    mode = learned[:: max(1, len(learned) // 20000)][int(np.argmax(lq))]
    lo, hi = np.percentile(oracle, [16, 84], axis=0)
    curve = learning_curve(prob, cfg.curve_sizes, cfg.mdn, r_curve, cfg.test_size) if with_curve else []
    return BenchmarkResult(tv, (a0, a1), oracle, learned, model, curve, (mode >= lo) & (mode <= hi))


def marginal_grid(samples: np.ndarray, bins: int = 60, lower=None, upper=None) -> list:
    """Rows (component, bin_center, density) of the per-component histograms."""
    rows = []
    lo = samples.min(0) if lower is None else np.asarray(lower)
    hi = samples.max(0) if upper is None else np.asarray(upper)
    for c in range(samples.shape[1]):
        dens, edges = np.histogram(samples[:, c], bins=np.linspace(lo[c], hi[c], bins + 1), density=True)
        for b in range(bins):
            rows.append((c, 0.5 * (edges[b] + edges[b + 1]), float(dens[b])))
    return rows
