"""Neural density estimation of the WTLS output distribution.

A mixture density network models q(y | x) for the conditional law of the WTLS
estimate y = x_check given the true state x. For the 15-d relative state the
network works in intrinsic coordinates (9 positions and 3 yaw offsets from
the prior box centre), because each orientation pair has one degree of
freedom and a density on the raw pairs would be degenerate.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.special import log_softmax, logsumexp, softmax

from .errors import DegenerateScene, Diverged, RellocError
from .geometry import tetra_angle_array, wrap_angle
from .linear import check_assumption1, solve_unaligned, transition_positions
from .manifold import TrustRegionConfig
from .wtls import Z95, build_noisy_system, wtls_solve

LOG2PI = np.log(2.0 * np.pi)
MAGIC = b"RLMDN"
FORMAT_VERSION = 1


# ---------------------------------------------------------------- prior box

@dataclass(frozen=True)
class PriorBox:
    """Uniform prior support built from the WTLS 95% confidence intervals.

    ``center``/``half`` are intrinsic (12): positions then yaw angles. The
    15-d per-element intervals of the raw state are available as ``lower``
    and ``upper``.
    """

    center: np.ndarray
    half: np.ndarray

    @classmethod
    def from_estimate(cls, x: np.ndarray, crlb: np.ndarray, floor: float = 1e-9,
                      spread: Optional[np.ndarray] = None) -> "PriorBox":
        """Box of 95% intervals around x from the CRLB.

        ``spread`` (12 intrinsic standard deviations) widens any coordinate
        whose CRLB standard deviation is smaller.
        """
        x = np.asarray(x, dtype=float)
        r = x[9:].reshape(3, 2)
        theta = np.arctan2(r[:, 1], r[:, 0])
        var_p = np.diag(crlb)[:9]
        var_t = np.empty(3)
        for c in range(3):
            t = np.array([-r[c, 1], r[c, 0]])
            blk = crlb[9 + 2 * c: 11 + 2 * c, 9 + 2 * c: 11 + 2 * c]
            var_t[c] = t @ blk @ t
        std = np.sqrt(np.maximum(np.concatenate([var_p, var_t]), 0.0))
        if spread is not None:
            std = np.maximum(std, spread)
        half = np.maximum(Z95 * std, floor)
        half[9:] = np.minimum(half[9:], np.pi)
        return cls(np.concatenate([x[:9], theta]), half)

    @property
    def theta_center(self) -> np.ndarray:
        return self.center[9:]

    def to_intrinsic(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        r = x[..., 9:].reshape(x.shape[:-1] + (3, 2))
        th = np.arctan2(r[..., 1], r[..., 0])
        return np.concatenate([x[..., :9], self.theta_center + wrap_angle(th - self.theta_center)], axis=-1)

    def from_intrinsic(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        th = u[..., 9:]
        r = np.stack([np.cos(th), np.sin(th)], axis=-1).reshape(u.shape[:-1] + (6,))
        return np.concatenate([u[..., :9], r], axis=-1)

    def intrinsic_jacobian(self, x: np.ndarray) -> np.ndarray:
        """d(intrinsic)/d(raw state), shape (12, 15)."""
        J = np.zeros((12, 15))
        J[:9, :9] = np.eye(9)
        r = np.asarray(x, dtype=float)[9:].reshape(3, 2)
        for c in range(3):
            n2 = r[c] @ r[c]
            J[9 + c, 9 + 2 * c] = -r[c, 1] / n2
            J[9 + c, 10 + 2 * c] = r[c, 0] / n2
        return J

    def contains_intrinsic(self, u: np.ndarray) -> np.ndarray:
        return np.all(np.abs(u - self.center) <= self.half, axis=-1)

    def contains(self, x: np.ndarray) -> bool:
        return bool(self.contains_intrinsic(self.to_intrinsic(x)))

    @property
    def lower(self) -> np.ndarray:
        return self._raw_bounds()[0]

    @property
    def upper(self) -> np.ndarray:
        return self._raw_bounds()[1]

    def _raw_bounds(self):
        lo = np.empty(15)
        hi = np.empty(15)
        lo[:9] = self.center[:9] - self.half[:9]
        hi[:9] = self.center[:9] + self.half[:9]
        for c in range(3):
            th = np.linspace(self.center[9 + c] - self.half[9 + c], self.center[9 + c] + self.half[9 + c], 721)
            for k, fn in enumerate((np.cos, np.sin)):
                v = fn(th)
                lo[9 + 2 * c + k], hi[9 + 2 * c + k] = v.min(), v.max()
        return lo, hi

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Uniform draws in intrinsic coordinates, returned as raw 15-d states."""
        u = self.center + self.half * rng.uniform(-1.0, 1.0, size=(n, 12))
        return self.from_intrinsic(u)


# ---------------------------------------------------------------- network

@dataclass
class MdnConfig:
    hidden: int = 30
    n_mix: int = 5
    lr: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 1000
    patience: int = 60
    val_fraction: float = 0.2
    sigma_floor: float = 1e-3
    residual: bool = True
    seed: int = 0


class MdnModel:
    """Two tanh hidden layers and a mixture head with diagonal covariances."""

    PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")

    def __init__(self, n_in: int, n_out: int, cfg: MdnConfig = MdnConfig(), rng: Optional[np.random.Generator] = None):
        self.n_in, self.n_out, self.cfg = n_in, n_out, cfg
        if cfg.residual and n_in != n_out:
            raise ValueError("residual means require n_in == n_out")
        K, H, D = cfg.n_mix, cfg.hidden, n_out
        rng = rng or np.random.default_rng(cfg.seed)
        n_head = K + 2 * K * D

        def glorot(a, b):
            return rng.normal(0.0, np.sqrt(2.0 / (a + b)), size=(a, b))

        self.params = {
            "W1": glorot(n_in, H), "b1": np.zeros(H),
            "W2": glorot(H, H), "b2": np.zeros(H),
            "W3": glorot(H, n_head) * 0.1, "b3": np.zeros(n_head),
        }
        if not cfg.residual:
            # spread initial component means
            self.params["b3"][K: K + K * D] = rng.normal(0.0, 0.5, K * D)
        self.in_shift = np.zeros(n_in)
        self.in_scale = np.ones(n_in)
        self.out_shift = np.zeros(n_out)
        self.out_scale = np.ones(n_out)
        self.history: dict = {"train": [], "val": []}

    # normalisation ------------------------------------------------------
    def set_normalization(self, in_shift, in_scale, out_shift, out_scale):
        self.in_shift = np.asarray(in_shift, dtype=float)
        self.in_scale = np.asarray(in_scale, dtype=float)
        self.out_shift = np.asarray(out_shift, dtype=float)
        self.out_scale = np.asarray(out_scale, dtype=float)

    # forward ------------------------------------------------------------
    def _forward(self, xn: np.ndarray):
        p = self.params
        K, D = self.cfg.n_mix, self.n_out
        h1 = np.tanh(xn @ p["W1"] + p["b1"])
        h2 = np.tanh(h1 @ p["W2"] + p["b2"])
        o = h2 @ p["W3"] + p["b3"]
        logits = o[:, :K]
        mu = o[:, K: K + K * D].reshape(-1, K, D)
        if self.cfg.residual:
            mu = mu + xn[:, None, :]
        ls = np.clip(o[:, K + K * D:].reshape(-1, K, D), -12.0, 8.0)
        sig = np.exp(ls) + self.cfg.sigma_floor
        return h1, h2, logits, mu, ls, sig

    def mixture(self, x: np.ndarray):
        """Mixture weights, means and standard deviations in original units."""
        xn = (np.atleast_2d(x) - self.in_shift) / self.in_scale
        _, _, logits, mu, _, sig = self._forward(xn)
        return softmax(logits, axis=1), mu * self.out_scale + self.out_shift, sig * self.out_scale

    def _terms(self, xn, yn):
        h1, h2, logits, mu, ls, sig = self._forward(xn)
        z = (yn[:, None, :] - mu) / sig
        logN = -0.5 * np.sum(z * z, axis=2) - np.sum(np.log(sig), axis=2) - 0.5 * self.n_out * LOG2PI
        lp = log_softmax(logits, axis=1) + logN
        ll = logsumexp(lp, axis=1)
        return h1, h2, logits, mu, ls, sig, z, lp, ll

    def log_prob(self, y: np.ndarray, x: np.ndarray) -> np.ndarray:
        xn = (np.atleast_2d(x) - self.in_shift) / self.in_scale
        yn = (np.atleast_2d(y) - self.out_shift) / self.out_scale
        ll = self._terms(xn, yn)[-1]
        return ll - np.sum(np.log(self.out_scale))

    def _backward(self, xn, yn, want_input: bool = False):
        """Gradients of sum_n log q(y_n | x_n) w.r.t. parameters (and inputs)."""
        p = self.params
        K, D = self.cfg.n_mix, self.n_out
        h1, h2, logits, mu, ls, sig, z, lp, ll = self._terms(xn, yn)
        gamma = np.exp(lp - ll[:, None])
        pi = softmax(logits, axis=1)
        d_logits = gamma - pi
        d_mu = gamma[:, :, None] * z / sig
        unclipped = (ls > -12.0) & (ls < 8.0)
        d_ls = gamma[:, :, None] * (z * z - 1.0) * (np.exp(ls) / sig) * unclipped
        dO = np.concatenate([d_logits, d_mu.reshape(-1, K * D), d_ls.reshape(-1, K * D)], axis=1)
        g = {"W3": h2.T @ dO, "b3": dO.sum(0)}
        da2 = (dO @ p["W3"].T) * (1.0 - h2 * h2)
        g["W2"] = h1.T @ da2
        g["b2"] = da2.sum(0)
        da1 = (da2 @ p["W2"].T) * (1.0 - h1 * h1)
        g["W1"] = xn.T @ da1
        g["b1"] = da1.sum(0)
        dx = None
        if want_input:
            dx = da1 @ p["W1"].T
            if self.cfg.residual:
                dx = dx + d_mu.sum(axis=1)
        return ll, g, dx

    def grad_log_prob_x(self, y: np.ndarray, x: np.ndarray):
        """(log q(y|x), d log q / dx) for each row, in original units."""
        xn = (np.atleast_2d(x) - self.in_shift) / self.in_scale
        yn = (np.atleast_2d(y) - self.out_shift) / self.out_scale
        ll, _, dx = self._backward(xn, np.broadcast_to(yn, (len(xn), self.n_out)).copy(), want_input=True)
        return ll - np.sum(np.log(self.out_scale)), dx / self.in_scale

    # serialisation ------------------------------------------------------
    def _arrays(self):
        arrs = [(n, self.params[n]) for n in self.PARAM_NAMES]
        arrs += [("in_shift", self.in_shift), ("in_scale", self.in_scale),
                 ("out_shift", self.out_shift), ("out_scale", self.out_scale)]
        return arrs

    def to_bytes(self, extra: Optional[dict] = None) -> bytes:
        arrs = self._arrays()
        header = {
            "version": FORMAT_VERSION,
            "n_in": self.n_in, "n_out": self.n_out,
            "config": {k: getattr(self.cfg, k) for k in MdnConfig.__dataclass_fields__},
            "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrs],
            "extra": extra or {},
        }
        hb = json.dumps(header, sort_keys=True).encode()
        buf = io.BytesIO()
        buf.write(MAGIC)
        buf.write(struct.pack("<I", len(hb)))
        buf.write(hb)
        for _, a in arrs:
            buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes):
        if data[:5] != MAGIC:
            raise RellocError("not an MDN model file")
        (n,) = struct.unpack("<I", data[5:9])
        header = json.loads(data[9: 9 + n].decode())
        if header["version"] != FORMAT_VERSION:
            raise RellocError(f"unsupported model version {header['version']}")
        model = cls(header["n_in"], header["n_out"], MdnConfig(**header["config"]))
        off = 9 + n
        vals = {}
        for spec in header["arrays"]:
            cnt = int(np.prod(spec["shape"])) if spec["shape"] else 1
            vals[spec["name"]] = np.frombuffer(data, dtype="<f8", count=cnt, offset=off).reshape(spec["shape"]).copy()
            off += 8 * cnt
        for name in cls.PARAM_NAMES:
            model.params[name] = vals[name]
        model.set_normalization(vals["in_shift"], vals["in_scale"], vals["out_shift"], vals["out_scale"])
        return model, header.get("extra", {})

    def save(self, path, extra: Optional[dict] = None) -> None:
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_bytes(self.to_bytes(extra))
        tmp.replace(path)

    @classmethod
    def load(cls, path):
        return cls.from_bytes(Path(path).read_bytes())


def fit_mdn(x: np.ndarray, y: np.ndarray, cfg: MdnConfig = MdnConfig(),
            in_norm: Optional[tuple] = None, out_norm: Optional[tuple] = None) -> MdnModel:
    """Train an MDN for q(y | x) by minimising the negative log-likelihood with Adam.

    Returns the parameters with the best validation loss. Normalisations
    default to the sample mean and standard deviation; residual models share
    one normalisation between input and output.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    rng = np.random.default_rng(cfg.seed)
    n = len(x)
    if in_norm is None:
        if cfg.residual:
            in_norm = (y.mean(0), np.maximum(y.std(0), 1e-12))
        else:
            in_norm = (x.mean(0), np.maximum(x.std(0), 1e-12))
    if out_norm is None:
        out_norm = in_norm if cfg.residual else (y.mean(0), np.maximum(y.std(0), 1e-12))
    model = MdnModel(x.shape[1], y.shape[1], cfg, rng)
    model.set_normalization(*in_norm, *out_norm)
    xn = (x - model.in_shift) / model.in_scale
    yn = (y - model.out_shift) / model.out_scale
    perm = rng.permutation(n)
    n_val = max(1, int(round(cfg.val_fraction * n)))
    val, tr = perm[:n_val], perm[n_val:]
    m = {k: np.zeros_like(v) for k, v in model.params.items()}
    v = {k: np.zeros_like(v) for k, v in model.params.items()}
    b1, b2, eps = 0.9, 0.999, 1e-8
    step = 0
    best = np.inf
    best_params = {k: a.copy() for k, a in model.params.items()}
    since = 0
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(tr)
        tot = 0.0
        for s in range(0, len(order), cfg.batch_size):
            idx = order[s: s + cfg.batch_size]
            ll, g, _ = model._backward(xn[idx], yn[idx])
            tot -= ll.sum()
            step += 1
            for k in model.params:
                gk = -g[k] / len(idx)
                m[k] = b1 * m[k] + (1 - b1) * gk
                v[k] = b2 * v[k] + (1 - b2) * gk * gk
                mh = m[k] / (1 - b1**step)
                vh = v[k] / (1 - b2**step)
                model.params[k] -= cfg.lr * mh / (np.sqrt(vh) + eps)
        train_loss = tot / len(tr)
        val_loss = -float(np.mean(model._terms(xn[val], yn[val])[-1]))
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise Diverged(f"non-finite loss at epoch {epoch}")
        model.history["train"].append(train_loss)
        model.history["val"].append(val_loss)
        if val_loss < best - 1e-6:
            best = val_loss
            best_params = {k: a.copy() for k, a in model.params.items()}
            since = 0
        else:
            since += 1
            if since >= cfg.patience:
                break
    model.params = best_params
    return model


# ---------------------------------------------------------------- training data

@dataclass
class TrainingSet:
    x: np.ndarray       # (s, 15) sampled true states
    x_check: np.ndarray  # (s, 15) weighted WTLS estimates
    box: PriorBox
    failures: int = 0


@dataclass(frozen=True)
class SimulationContext:
    """What the generative model x -> x_check needs besides x itself."""

    dp: np.ndarray        # (d - 1, 4, 3) nominal displacements
    sigma_angle: float
    sigma_disp: float
    refine: bool = True
    max_range: Optional[float] = None
    # training pairs need far less precision than the estimate they model
    trust_region: TrustRegionConfig = TrustRegionConfig(tol=1e-3, max_iters=30, check_cauchy=False)
    hessian: str = "fd"   # "gn" trades a little accuracy for speed


def exact_angles_from_state(x: np.ndarray, dp: np.ndarray) -> np.ndarray:
    """Noise-free angle arrays (d, 13) for state x at the first instant and displacements dp."""
    p = x[:9].reshape(3, 3)
    r = x[9:].reshape(3, 2)
    out = [tetra_angle_array(-p)]
    for step in dp:
        p = transition_positions(p, r, step)
        out.append(tetra_angle_array(-p))
    return np.array(out)


def _scene_ok(x: np.ndarray, dp: np.ndarray) -> bool:
    p = x[:9].reshape(3, 3)
    r = x[9:].reshape(3, 2)
    for t in range(len(dp) + 1):
        P = -p
        if abs(np.linalg.det(P)) < 1e-9 * max(np.abs(P).max(), 1e-12) ** 3:
            return False
        if np.min(np.linalg.norm(P[:, :2], axis=1)) < 1e-9:
            return False
        try:
            check_assumption1(tetra_angle_array(P), tol=1e-6)
        except RellocError:
            return False
        if t < len(dp):
            p = transition_positions(p, r, dp[t])
    return True


def simulate_pair(x: np.ndarray, ctx: SimulationContext, u: int, rng: np.random.Generator) -> np.ndarray:
    """One weighted WTLS estimate for true state x from u synthetic coefficient matrices.

    Raises ``DegenerateScene`` when every one of the u solutions leaves the
    sensing range.
    """
    dp = np.asarray(ctx.dp, dtype=float)
    ang = exact_angles_from_state(x, dp)
    z = np.append(x, -1.0)
    sols, logw = [], []
    sa, sd = max(ctx.sigma_angle, 1e-6), max(ctx.sigma_disp, 1e-6)
    for _ in range(u):
        an = wrap_angle(ang + rng.normal(0.0, ctx.sigma_angle, ang.shape))
        dn = dp + rng.normal(0.0, ctx.sigma_disp, dp.shape)
        sys = build_noisy_system(an, dn, sa, sd, ctx.refine)
        alts = []
        if ctx.max_range is not None:
            try:
                alts.append(solve_unaligned(an, dn).x)
            except RellocError:
                pass
        est = wtls_solve(sys, cfg=ctx.trust_region, hessian=ctx.hessian, max_range=ctx.max_range, alt_inits=alts)
        if "out_of_range" in est.flags:
            continue
        sols.append(est.x)
        if u > 1:
            e = sys.C @ z
            M = np.einsum("rcn,c->rn", sys.J, z)
            P = (M * sys.var) @ M.T + 1e-12 * np.eye(len(e))
            _, logdet = np.linalg.slogdet(P)
            logw.append(-0.5 * (e @ np.linalg.solve(P, e)) - 0.5 * logdet)
    if not sols:
        raise DegenerateScene("all simulated estimates left the sensing range")
    if len(sols) == 1:
        return sols[0]
    w = np.exp(np.array(logw) - logsumexp(logw))
    out = (w[:, None] * np.array(sols)).sum(0)
    r = out[9:].reshape(3, 2)
    r /= np.linalg.norm(r, axis=1, keepdims=True)
    return out


def pilot_spread(x: np.ndarray, ctx: SimulationContext, n: int, rng: np.random.Generator) -> np.ndarray:
    """Robust per-coordinate spread of simulated estimates around x (intrinsic, 12).

    Uses 1.4826 times the median absolute deviation so that runaway
    solutions do not dominate.
    """
    box = PriorBox(np.concatenate([x[:9], np.arctan2(x[10::2], x[9::2])]), np.ones(12))
    u0 = box.to_intrinsic(x)
    devs = []
    for _ in range(n):
        try:
            devs.append(box.to_intrinsic(simulate_pair(x, ctx, 1, rng)) - u0)
        except RellocError:
            continue
    if len(devs) < 3:
        return np.zeros(12)
    d = np.array(devs)
    d[:, 9:] = wrap_angle(d[:, 9:])
    return 1.4826 * np.median(np.abs(d - np.median(d, axis=0)), axis=0)


def simulate_training_set(box: PriorBox, ctx: SimulationContext, s: int, u: int,
                          rng: np.random.Generator, max_retries: int = 20) -> TrainingSet:
    """Draw s states uniformly in the prior box and simulate their WTLS estimates."""
    if s < 1 or u < 1:
        raise ValueError("s and u must be >= 1")
    xs, ys = [], []
    failures = 0
    diameter = 2.0 * float(np.linalg.norm(box.half[:9]))
    while len(xs) < s:
        if failures > 20 * s + 100:
            raise DegenerateScene("too many failed simulations")
        x = box.sample(rng, 1)[0]
        for _ in range(max_retries):
            if _scene_ok(x, ctx.dp):
                break
            failures += 1
            x = box.sample(rng, 1)[0]
        else:
            raise DegenerateScene("prior box keeps producing degenerate scenes")
        try:
            y = simulate_pair(x, ctx, u, rng)
        except RellocError:
            failures += 1
            continue
        if not np.all(np.isfinite(y)) or np.any(np.abs(box.to_intrinsic(y) - box.center)[:9] > 10.0 * diameter):
            failures += 1
            continue
        xs.append(x)
        ys.append(y)
    return TrainingSet(np.array(xs), np.array(ys), box, failures)


def train_mdn(ts: TrainingSet, cfg: MdnConfig = MdnConfig()) -> MdnModel:
    """Fit q(x_check | x) in intrinsic coordinates normalised by the prior box."""
    if len(ts.x) < 200:
        raise ValueError("train_mdn needs at least 200 samples")
    ux = ts.box.to_intrinsic(ts.x)
    uy = ts.box.to_intrinsic(ts.x_check)
    norm = (ts.box.center, ts.box.half)
    return fit_mdn(ux, uy, cfg, in_norm=norm, out_norm=norm)


@dataclass
class PosteriorValue:
    logpdf: float
    grad: np.ndarray
    outside: bool = False


def posterior_logpdf_grad(model: MdnModel, box: PriorBox, x_check0: np.ndarray, x: np.ndarray) -> PosteriorValue:
    """Unnormalised log q(x | x_check0) = log q(x_check0 | x) + log p(x) and its gradient."""
    u = box.to_intrinsic(x)
    if not box.contains_intrinsic(u):
        return PosteriorValue(-np.inf, np.zeros(15), True)
    ll, du = model.grad_log_prob_x(box.to_intrinsic(x_check0), u[None, :])
    log_box = -float(np.sum(np.log(2.0 * box.half)))
    return PosteriorValue(float(ll[0]) + log_box, du[0] @ box.intrinsic_jacobian(x))


@dataclass
class NdePriorModel:
    """Everything the MAP prior term needs: model, box and the observed estimate."""

    model: MdnModel
    box: PriorBox
    x_check0: np.ndarray
    training: Optional[TrainingSet] = None
    info: dict = field(default_factory=dict)


def build_nde_prior(x_check0: np.ndarray, crlb: np.ndarray, ctx: SimulationContext, s: int, u: int,
                    rng: np.random.Generator, cfg: MdnConfig = MdnConfig(), n_pilot: int = 20,
                    spread: Optional[np.ndarray] = None) -> NdePriorModel:
    """Prior box, training set and trained MDN for the first window.

    With ``n_pilot > 0`` the box is widened to the bootstrap spread of
    estimates simulated at x_check0 wherever the CRLB is narrower. An
    external ``spread`` (12 intrinsic standard deviations) widens it further.
    """
    if n_pilot > 0:
        pilot = pilot_spread(np.asarray(x_check0, dtype=float), ctx, n_pilot, rng)
        spread = pilot if spread is None else np.maximum(pilot, spread)
    box = PriorBox.from_estimate(x_check0, crlb, spread=spread)
    ts = simulate_training_set(box, ctx, s, u, rng)
    model = train_mdn(ts, cfg)
    return NdePriorModel(model, box, np.asarray(x_check0, dtype=float), ts)
