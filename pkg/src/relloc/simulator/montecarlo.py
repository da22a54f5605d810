"""Seeded Monte Carlo harness over noise level x space x algorithm.

Every trial draws its scenario from ``(master seed, space index, trial)`` so
that all noise levels of one space see the same trajectories, and its noise
and algorithm randomness from ``(master seed, cell, trial)``. Algorithms of
one trial share a cache, so the pipeline's WTLS start and NDE prior are
computed once and reused by the ablation variants.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import RellocError
from ..linear import solve_unaligned
from ..map_estimator import (GaussianPrior, NdePrior, NoiseConfig, PriorTerm, SlidingWindowConfig,
                             run_sliding_window)
from ..nde import MdnConfig
from ..wtls import wtls_from_measurements
from .baselines import BaselineConfig, from_intrinsic, perturbed_prior, run_ekf, run_nls, run_pf, to_intrinsic
from .measurements import synthesize_measurements, tetra_stream
from .scenario import ScenarioConfig, generate_scenario

TET = (0, 1, 2, 3)


def rmse(x_hat: np.ndarray, x_true: np.ndarray) -> float:
    """sqrt(mean((x_hat - x)^2)) over the 15 components; orientations as raw pairs."""
    x_hat = np.asarray(x_hat, dtype=float)
    x_true = np.asarray(x_true, dtype=float)
    if x_hat.shape != x_true.shape:
        raise ValueError("shape mismatch")
    return float(np.sqrt(np.mean((x_hat - x_true) ** 2)))


@dataclass(frozen=True)
class ExperimentConfig:
    sigmas: tuple = (0.005, 0.01, 0.05, 0.08)
    spaces: tuple = (10.0,)
    algorithms: tuple = ("alg1", "alg2", "alg4")
    trials: int = 50
    seed: int = 0
    disp_ratio: float = 1.0         # sigma_disp = disp_ratio * sigma
    instants: int = 12
    eval_instants: int = 10         # RMSE is averaged over the first instants
    window: int = 10
    drop: int = 5
    nde_samples: int = 200
    nde_repeats: int = 1
    nde_pilot: int = 10
    mdn_epochs: int = 400
    mdn_patience: int = 40
    n_particles: int = 3000
    filter_prior_level: float = 0.1
    workers: int = 1
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.eval_instants > self.window or self.window > self.instants:
            raise ValueError("need eval_instants <= window <= instants")
        for a in self.algorithms:
            algorithm_fn(a)

    def scenario_for(self, space: float) -> ScenarioConfig:
        return replace(self.scenario, space=float(space), instants=self.instants)

    def window_config(self, space: float, prior: str = "nde") -> SlidingWindowConfig:
        return SlidingWindowConfig(window=self.window, drop=self.drop, prior=prior,
                                   nde_samples=self.nde_samples, nde_repeats=self.nde_repeats,
                                   nde_pilot=self.nde_pilot,
                                   mdn=MdnConfig(max_epochs=self.mdn_epochs, patience=self.mdn_patience),
                                   max_range=max_range(space))

    def baseline_config(self, space: float) -> BaselineConfig:
        return BaselineConfig(n_particles=self.n_particles, prior_level=self.filter_prior_level,
                              window=self.window, space=float(space))


def max_range(space: float) -> float:
    """No two robots in a cube are farther apart than its diagonal."""
    return float(space) * np.sqrt(3.0)


@dataclass
class TrialResult:
    sigma: float
    space: float
    cell: int
    trial: int
    algorithm: str
    rmse_per_instant: list
    rmse: float
    seconds: float
    flags: list = field(default_factory=list)
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None and np.isfinite(self.rmse)

    def to_record(self) -> dict:
        return asdict(self)


@dataclass
class TrialContext:
    """Inputs of one trial plus a cache shared by its algorithms."""

    cfg: ExperimentConfig
    sigma: float
    space: float
    angles: np.ndarray
    dp: np.ndarray
    truth: np.ndarray
    noise: NoiseConfig
    seed_seq: np.random.SeedSequence
    cache: dict = field(default_factory=dict)

    def rng(self, name: str) -> np.random.Generator:
        """Stream keyed by name so results do not depend on algorithm order."""
        key = int.from_bytes(name.encode()[:8].ljust(8, b"\0"), "little") % (2**63)
        return np.random.default_rng(np.random.SeedSequence(self.seed_seq.entropy, spawn_key=self.seed_seq.spawn_key + (key,)))

    @property
    def E(self) -> int:
        return self.cfg.eval_instants


# ---------------------------------------------------------------- algorithms
# each returns (estimates (E, 15) with NaN rows for failed instants, flags)

def _alg1(ctx: TrialContext):
    out = np.full((ctx.E, 15), np.nan)
    for k in range(ctx.E):
        try:
            out[k] = solve_unaligned(ctx.angles[k: k + 3], ctx.dp[k: k + 2]).x
        except RellocError:
            pass
    return out, []


def _alg2(ctx: TrialContext):
    out = np.full((ctx.E, 15), np.nan)
    flags = set()
    for k in range(ctx.E):
        try:
            est = wtls_from_measurements(ctx.angles[k: k + 3], ctx.dp[k: k + 2], ctx.noise.sigma_angle,
                                         ctx.noise.sigma_disp, floor=ctx.noise.floor, max_range=max_range(ctx.space))
        except RellocError:
            continue
        out[k] = est.x
        flags.update(est.flags)
    return out, sorted(flags)


def _pipeline(ctx: TrialContext):
    """Full pipeline with the NDE prior; cached for the ablation variants."""
    if "alg4" not in ctx.cache:
        res = run_sliding_window(ctx.angles, ctx.dp, ctx.noise, ctx.cfg.window_config(ctx.space), rng=ctx.rng("nde"))
        ctx.cache["alg4"] = res
    return ctx.cache["alg4"]


def _flags(res):
    return sorted({f for w in res.windows for f in w.flags})


def _alg4(ctx: TrialContext):
    res = _pipeline(ctx)
    return res.estimates[: ctx.E], _flags(res)


def _map_with(ctx: TrialContext, prior, init=None, prior_name: str = "none"):
    cfg = ctx.cfg.window_config(ctx.space, prior="none")
    res = run_sliding_window(ctx.angles, ctx.dp, ctx.noise, cfg, first_prior=prior, init_states=init)
    return res.estimates[: ctx.E], _flags(res)


def _map_none(ctx: TrialContext):
    return _map_with(ctx, None)


def _map_gaussian(ctx: TrialContext):
    cfg = ctx.cfg.window_config(ctx.space, prior="gaussian")
    res = run_sliding_window(ctx.angles, ctx.dp, ctx.noise, cfg)
    return res.estimates[: ctx.E], _flags(res)


def perturb_states(states: np.ndarray, level: float, rng: np.random.Generator) -> np.ndarray:
    """Every instant moved by a random intrinsic offset of norm ``level * |u_k|``.

    Positions get independent offsets per instant; the yaw offset of the first
    instant is applied to all instants because the orientations are shared.
    """
    U = to_intrinsic(states)
    D = rng.standard_normal(U.shape)
    D /= np.linalg.norm(D, axis=1, keepdims=True)
    D *= level * np.linalg.norm(U, axis=1, keepdims=True)
    U = U + D
    U[:, 9:] = U[0, 9:]
    return from_intrinsic(U)


def offset_mean(x: np.ndarray, z: float, rng: np.random.Generator) -> np.ndarray:
    """A state whose intrinsic coordinates differ from x's by relative norm z."""
    u = to_intrinsic(x)
    d = rng.standard_normal(12)
    return from_intrinsic(u + z * np.linalg.norm(u) * d / np.linalg.norm(d))


def _init_variant(level: float):
    # one stream for every level: within a trial the levels scale the same
    # perturbation directions, so the comparison across levels is paired
    def run(ctx: TrialContext):
        base = _pipeline(ctx)
        init = perturb_states(base.initial, level, ctx.rng("init"))
        prior = NdePrior(base.nde) if base.nde is not None else PriorTerm()
        return _map_with(ctx, prior, init)
    return run


def _gaussian_variant(z: float, scale: float):
    """Prior N(mu_z, (scale * sigma)^2 I) on the first instant, WTLS start."""
    def run(ctx: TrialContext):
        base = _pipeline(ctx)
        mean = offset_mean(ctx.truth[0], z, ctx.rng(f"mu{z}"))
        var = max((scale * ctx.sigma) ** 2, 1e-12)
        return _map_with(ctx, GaussianPrior(mean, var * np.eye(12)), base.initial)
    return run


def _gaussian_cov_variant(z: float, c: float):
    """Prior N(mu_z, c I) on the first instant, WTLS start."""
    def run(ctx: TrialContext):
        base = _pipeline(ctx)
        mean = offset_mean(ctx.truth[0], z, ctx.rng(f"mu{z}"))
        return _map_with(ctx, GaussianPrior(mean, c * np.eye(12)), base.initial)
    return run


def _filter(kind: str):
    def run(ctx: TrialContext):
        bc = ctx.cfg.baseline_config(ctx.space)
        rng = ctx.rng(kind)
        prior = perturbed_prior(ctx.truth[0], bc.prior_level, rng)
        T = ctx.cfg.window
        if kind == "ekf":
            est = run_ekf(ctx.angles[:T], ctx.dp[:T - 1], ctx.noise, prior, bc)
        else:
            est = run_pf(ctx.angles[:T], ctx.dp[:T - 1], ctx.noise, prior, rng, bc)
        return est[: ctx.E], []
    return run


def _nls(ctx: TrialContext):
    est = run_nls(ctx.angles, ctx.dp, ctx.noise, ctx.rng("nls"), ctx.cfg.baseline_config(ctx.space))
    return est[: ctx.E], []


# The prior ablation's named Gaussians: (mean offset, std in units of sigma)
NAMED_PRIORS = {"N1": (0.0, 0.1), "N2": (0.0, 100.0), "N3": (0.3, 10.0), "N4": (0.3, 100.0)}

_FIXED = {
    "alg1": _alg1,
    "alg2": _alg2,
    "alg4": _alg4,
    "map": _map_none,
    "map_gauss": _map_gaussian,
    "ekf": _filter("ekf"),
    "pf": _filter("pf"),
    "nls": _nls,
}


def algorithm_fn(name: str) -> Callable:
    """Resolve an algorithm name.

    Fixed names: alg1, alg2, alg4, map, map_gauss, ekf, pf, nls. Variants:
    ``init:<level>`` (pipeline from a perturbed start), ``prior:N1``..``N4``
    and ``gauss:<z>:<c>`` (Gaussian prior N(mu_z, c I)).
    """
    if name in _FIXED:
        return _FIXED[name]
    head, _, rest = name.partition(":")
    try:
        if head == "init":
            return _init_variant(float(rest))
        if head == "prior" and rest in NAMED_PRIORS:
            return _gaussian_variant(*NAMED_PRIORS[rest])
        if head == "gauss":
            z, c = rest.split(":")
            return _gaussian_cov_variant(float(z), float(c))
    except ValueError:
        pass
    raise ValueError(f"unknown algorithm {name!r}")


# ---------------------------------------------------------------- harness

def cells(cfg: ExperimentConfig) -> list:
    """(cell index, space index, sigma, space) in a fixed order."""
    out = []
    for si, space in enumerate(cfg.spaces):
        for sigma in cfg.sigmas:
            out.append((len(out), si, float(sigma), float(space)))
    return out


def make_trial(cfg: ExperimentConfig, cell: int, space_idx: int, sigma: float, space: float, trial: int) -> TrialContext:
    sc = generate_scenario(cfg.scenario_for(space), int(np.random.SeedSequence(cfg.seed, spawn_key=(space_idx, trial)).generate_state(1)[0]))
    ss = np.random.SeedSequence(cfg.seed, spawn_key=(1000 + cell, trial))
    noise = NoiseConfig(sigma, cfg.disp_ratio * sigma)
    frames = synthesize_measurements(sc, noise, rng=np.random.default_rng(ss.spawn(1)[0]))
    angles, dp = tetra_stream(frames, TET)
    return TrialContext(cfg, sigma, space, angles, dp, sc.true_states(TET), noise, ss)


def run_trial(cfg: ExperimentConfig, cell: int, space_idx: int, sigma: float, space: float, trial: int) -> list:
    """All algorithms of one trial; failures are recorded, never raised."""
    try:
        ctx = make_trial(cfg, cell, space_idx, sigma, space, trial)
    except RellocError as exc:
        return [TrialResult(sigma, space, cell, trial, a, [], float("nan"), 0.0, [], f"scenario: {exc}") for a in cfg.algorithms]
    out = []
    for a in cfg.algorithms:
        t0 = time.perf_counter()
        try:
            est, flags = algorithm_fn(a)(ctx)
            per = [rmse(est[k], ctx.truth[k]) if np.all(np.isfinite(est[k])) else float("nan") for k in range(ctx.E)]
            good = [v for v in per if np.isfinite(v)]
            val = float(np.mean(good)) if good else float("nan")
            if len(good) < len(per):
                flags = list(flags) + [f"failed_instants={len(per) - len(good)}"]
            err = None if good else "no estimate"
        except (RellocError, np.linalg.LinAlgError, ValueError) as exc:
            per, val, flags, err = [], float("nan"), [], f"{type(exc).__name__}: {exc}"
        out.append(TrialResult(sigma, space, cell, trial, a, per, val, time.perf_counter() - t0, flags, err))
    return out


def _run_trial_args(args):
    return run_trial(*args)


def run_monte_carlo(cfg: ExperimentConfig, progress: Optional[Callable[[int, int], None]] = None) -> list:
    """Every (cell, trial) in a fixed order; results sorted the same way whatever the pool size."""
    jobs = [(cfg, c, si, sg, sp, t) for c, si, sg, sp in cells(cfg) for t in range(cfg.trials)]
    results = []
    if cfg.workers <= 1:
        for n, job in enumerate(jobs):
            results.extend(run_trial(*job))
            if progress:
                progress(n + 1, len(jobs))
    else:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            for n, res in enumerate(pool.map(_run_trial_args, jobs)):
                results.extend(res)
                if progress:
                    progress(n + 1, len(jobs))
    return results


@dataclass
class CellSummary:
    sigma: float
    space: float
    algorithm: str
    trials: int
    failures: int
    mean_rmse: float
    var_rmse: float
    mean_seconds: float


def aggregate(results: Sequence[TrialResult], algorithms: Optional[Sequence[str]] = None) -> list:
    """Mean and variance of the trial RMSEs per (sigma, space, algorithm)."""
    groups: dict = {}
    for r in results:
        groups.setdefault((r.sigma, r.space, r.algorithm), []).append(r)
    order = list(algorithms) if algorithms else sorted({r.algorithm for r in results})
    out = []
    for (sigma, space) in sorted({(s, sp) for s, sp, _ in groups}, key=lambda t: (t[1], t[0])):
        for a in order:
            rs = groups.get((sigma, space, a))
            if not rs:
                continue
            vals = np.array([r.rmse for r in rs if r.ok])
            out.append(CellSummary(sigma, space, a, len(rs), len(rs) - len(vals),
                                   float(vals.mean()) if len(vals) else float("nan"),
                                   float(vals.var()) if len(vals) else float("nan"),
                                   float(np.mean([r.seconds for r in rs]))))
    return out


def summary_table(summaries: Sequence[CellSummary]) -> dict:
    """{(sigma, space): {algorithm: mean_rmse}} for quick comparisons."""
    out: dict = {}
    for s in summaries:
        out.setdefault((s.sigma, s.space), {})[s.algorithm] = s.mean_rmse
    return out
