"""Weighted total least squares over d consecutive instants, solved on R^9 x (S^1)^3.

The raw measurement vector of a d-instant run is ``concat(angles.ravel(),
dp.ravel())`` with angles (d, 13) and displacements (d - 1, 4, 3), i.e.
13 d + 12 (d - 1) numbers. The coefficient matrix C = [A | b] is built from
refined angles, so its noise covariance accounts for the refinement too.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import NoProgress, RellocError, RepeatedSmallestSingularValue, ZeroLastComponent
from .geometry import PROJ_TRIANGLES
from .linear import solve_unaligned, stacked_system
from .manifold import CostFunction, ProductManifold, TrustRegionConfig, trust_region_minimize

STATE_MANIFOLD = ProductManifold(9, 3)
P_REG = 1e-12
Z95 = 1.959963984540054


def refine_angles(measured) -> np.ndarray:
    """Least-squares correction of a triangle's angles so their magnitudes sum to pi.

    Works on the last axis (length 3). Each result is sign(a) (|a| + c) with
    one common c, so sum(sign(a) * result) == pi exactly. An angle within
    |c| of zero can change sign.
    """
    a = np.asarray(measured, dtype=float)
    mag = np.abs(a)
    corr = (np.pi - mag.sum(axis=-1, keepdims=True)) / 3.0
    sgn = np.where(a < 0, -1.0, 1.0)
    return sgn * (mag + corr)


def refine_tetra(angles) -> np.ndarray:
    """Apply ``refine_angles`` to both projected triangles of (..., 13) angle arrays."""
    out = np.array(angles, dtype=float)
    for tri in PROJ_TRIANGLES:
        idx = list(tri)
        out[..., idx] = refine_angles(out[..., idx])
    return out


def split_measurements(meas: np.ndarray, d: int):
    meas = np.asarray(meas, dtype=float)
    batch = meas.shape[:-1]
    ang = meas[..., : 13 * d].reshape(batch + (d, 13))
    dp = meas[..., 13 * d:].reshape(batch + (d - 1, 4, 3))
    return ang, dp


def pack_measurements(angles, dp) -> np.ndarray:
    return np.concatenate([np.ravel(angles), np.ravel(dp)])


def build_C(meas: np.ndarray, d: int, refine: bool = True) -> np.ndarray:
    """C = [A | b] of shape (..., 6d, 16) from packed measurement vectors."""
    ang, dp = split_measurements(meas, d)
    if refine:
        ang = refine_tetra(ang)
    A, b = stacked_system(ang, dp)
    return np.concatenate([A, b[..., None]], axis=-1)


def tls_closed_form(C: np.ndarray) -> np.ndarray:
    """Classical TLS estimate from the right singular vector of the smallest singular value."""
    C = np.asarray(C, dtype=float)
    if C.shape[0] < C.shape[1]:
        raise ValueError("C needs at least as many rows as columns")
    _, s, vt = np.linalg.svd(C)
    if s[-2] - s[-1] <= 1e-12 * max(s[0], 1.0):
        raise RepeatedSmallestSingularValue("smallest singular value is not simple")
    v = vt[-1]
    if abs(v[-1]) < 1e-12:
        raise ZeroLastComponent("last component of the null direction vanishes")
    return -v[:-1] / v[-1]


def project_state(x: np.ndarray) -> np.ndarray:
    """Nearest point of R^9 x (S^1)^3 (orientation pairs normalised)."""
    out = np.array(x, dtype=float)
    r = out[9:].reshape(3, 2)
    n = np.linalg.norm(r, axis=1, keepdims=True)
    bad = n[:, 0] < 1e-12
    r[~bad] /= n[~bad]
    r[bad] = (1.0, 0.0)
    return out


@dataclass
class NoisyLinearSystem:
    C: np.ndarray            # (6d, 16), built from the (noisy) measurements
    J: np.ndarray            # (6d, 16, n_meas): dC/d(measurement)
    var: np.ndarray          # (n_meas,) measurement variances
    d: int
    block_diagonal: bool = False

    @property
    def P(self) -> np.ndarray:
        """Covariance of vec(C) (column-major)."""
        rows = self.C.shape[0]
        Jv = self.J.transpose(1, 0, 2).reshape(16 * rows, -1)
        P = (Jv * self.var) @ Jv.T
        return 0.5 * (P + P.T)


def measurement_variances(d: int, sigma_angle: float, sigma_disp: float) -> np.ndarray:
    return np.concatenate([np.full(13 * d, sigma_angle**2), np.full(12 * (d - 1), sigma_disp**2)])


def coefficient_jacobian(meas: np.ndarray, d: int, h: float = 1e-6, refine: bool = True) -> np.ndarray:
    """Central-difference Jacobian of C with respect to every raw measurement."""
    meas = np.asarray(meas, dtype=float)
    n = meas.size
    E = np.eye(n) * h
    Cp = build_C(meas + E, d, refine)
    Cm = build_C(meas - E, d, refine)
    return np.moveaxis((Cp - Cm) / (2 * h), 0, -1)


def build_noisy_system(angles, dp, sigma_angle: float, sigma_disp: float, refine: bool = True, block_diagonal: bool = False) -> NoisyLinearSystem:
    angles = np.asarray(angles, dtype=float)
    d = angles.shape[0]
    meas = pack_measurements(angles, dp)
    C = build_C(meas, d, refine)
    J = coefficient_jacobian(meas, d, refine=refine)
    return NoisyLinearSystem(C, J, measurement_variances(d, sigma_angle, sigma_disp), d, block_diagonal)


def build_noise_covariance(angles, dp, sigma_angle: float, sigma_disp: float, refine: bool = True) -> np.ndarray:
    """Covariance of vec(C) by first-order propagation of the measurement noise."""
    return build_noisy_system(angles, dp, sigma_angle, sigma_disp, refine).P


class WtlsCost:
    """f(x) = e' W e / 2 with e = C z, z = (x, -1), W = (P'(z) + eps I)^-1."""

    def __init__(self, sys: NoisyLinearSystem):
        self.sys = sys
        self.C = sys.C
        self.rows = sys.C.shape[0]
        n = sys.J.shape[2]
        # flattened copies of J so that the batched evaluation is plain matmuls
        self._Jz = sys.J.transpose(1, 0, 2).reshape(16, -1)
        self._Jn = sys.J.transpose(2, 0, 1).reshape(n, -1)
        self._sd = np.sqrt(sys.var)
        self._diag = np.arange(self.rows)

    def _parts(self, X: np.ndarray):
        X = np.atleast_2d(X)
        Z = np.concatenate([X, -np.ones((len(X), 1))], axis=1)
        E = Z @ self.C.T
        M = (Z @ self._Jz).reshape(len(X), self.rows, -1)
        Ms = M * self._sd
        P = Ms @ Ms.transpose(0, 2, 1)
        if self.sys.block_diagonal:
            P = P * np.eye(self.rows)
        P[:, self._diag, self._diag] += P_REG
        return Z, E, M, P

    def value(self, x: np.ndarray) -> float:
        return self.value_grad(x)[0]

    def value_grad_batch(self, X: np.ndarray):
        _, E, M, P = self._parts(X)
        Y = np.linalg.solve(P, E[..., None])[..., 0]
        f = 0.5 * np.einsum("br,br->b", E, Y)
        B = len(Y)
        if self.sys.block_diagonal:
            W = (M * self.sys.var) * (Y[..., None] ** 2)
            dq = np.einsum("brn,rcn->bc", W, self.sys.J)
        else:
            # dq_c = sum_r,n Y_r J_rcn var_n (M' Y)_n
            w = (Y[:, None, :] @ M)[:, 0, :] * self.sys.var
            Jw = (w @ self._Jn).reshape(B, self.rows, 16)
            dq = (Y[:, None, :] @ Jw)[:, 0, :]
        G = Y @ self.C - dq
        return f, G[:, :15]

    def value_grad(self, x: np.ndarray):
        f, G = self.value_grad_batch(x[None, :])
        return float(f[0]), G[0]

    def weight(self, x: np.ndarray) -> np.ndarray:
        _, _, _, P = self._parts(x)
        return np.linalg.inv(P[0])

    def gauss_newton(self, x: np.ndarray) -> np.ndarray:
        W = self.weight(x)
        A = self.C[:, :15]
        return A.T @ W @ A

    def cost_function(self, hessian: str = "fd") -> CostFunction:
        return CostFunction(
            STATE_MANIFOLD,
            value=self.value,
            value_grad=self.value_grad,
            value_grad_batch=self.value_grad_batch,
            ehess=self.gauss_newton if hessian == "gn" else None,
        )


@dataclass
class WtlsEstimate:
    x: np.ndarray
    crlb: np.ndarray
    ci: np.ndarray           # (15, 2) lower / upper
    fisher: np.ndarray       # F_z, 16 x 16
    cost: float
    cost_init: float
    x_init: np.ndarray
    iterations: int
    gradnorm: float
    flags: list = field(default_factory=list)

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(np.maximum(np.diag(self.crlb), 0.0))


def fisher_and_crlb(cost: WtlsCost, x: np.ndarray):
    W = cost.weight(x)
    Fz = cost.C.T @ W @ cost.C
    Fz = 0.5 * (Fz + Fz.T)
    Fx = Fz[:15, :15]
    B = STATE_MANIFOLD.basis(x)
    Ft = B.T @ Fx @ B
    crlb = B @ np.linalg.pinv(Ft, hermitian=True) @ B.T
    crlb = 0.5 * (crlb + crlb.T)
    return Fz, crlb


def _in_range(x: np.ndarray, max_range: Optional[float]) -> bool:
    if max_range is None:
        return True
    return bool(np.all(np.linalg.norm(np.asarray(x)[:9].reshape(3, 3), axis=1) <= max_range))


def wtls_solve(sys: NoisyLinearSystem, init_from_tls: bool = True, x_init: Optional[np.ndarray] = None,
               cfg: TrustRegionConfig = TrustRegionConfig(), hessian: str = "fd",
               max_range: Optional[float] = None, alt_inits: Sequence[np.ndarray] = ()) -> WtlsEstimate:
    """Minimise the weighted TLS cost over x in R^9 x (S^1)^3.

    With ``max_range`` set, a solution placing any robot farther than the
    sensing range is rejected; each of ``alt_inits`` is then tried in turn and
    the in-range result with the lowest cost wins. If none is in range the
    projected initial point is returned with the flag ``out_of_range``.
    """
    flags = []
    if init_from_tls:
        x0 = project_state(tls_closed_form(sys.C))
    elif x_init is not None:
        x0 = project_state(x_init)
    else:
        raise ValueError("need an initial point")
    cost = WtlsCost(sys)
    cf = cost.cost_function(hessian)
    f0 = cost.value(x0)

    def run(start):
        try:
            res = trust_region_minimize(cf, start, cfg)
            return res.x, res.cost, res.iterations, res.gradnorm, None
        except NoProgress:
            return start, cost.value(start), cfg.max_iters, float("nan"), "no_progress"

    x, f, its, gn, flag = run(x0)
    if flag:
        flags.append(flag)
    if not _in_range(x, max_range):
        best = None
        for alt in alt_inits:
            cand = run(project_state(alt))
            if _in_range(cand[0], max_range) and (best is None or cand[1] < best[1]):
                best = cand
        if best is not None:
            x, f, its, gn, _ = best
            flags.append("restarted")
        else:
            flags.append("out_of_range")
            starts = [x0] + [project_state(a) for a in alt_inits]
            inside = [a for a in starts if _in_range(a, max_range)]
            x = inside[0] if inside else x0
            f, gn = cost.value(x), float("nan")
    _, _, _, P = cost._parts(x)
    if np.linalg.cond(P[0]) > 1e14:
        flags.append("singular_weight")
    Fz, crlb = fisher_and_crlb(cost, x)
    half = Z95 * np.sqrt(np.maximum(np.diag(crlb), 0.0))
    ci = np.column_stack([x - half, x + half])
    return WtlsEstimate(x, crlb, ci, Fz, f, f0, x0, its, gn, flags)


def wtls_from_measurements(angles, dp, sigma_angle: float, sigma_disp: float, floor: float = 1e-6,
                           max_range: Optional[float] = None, **kw) -> WtlsEstimate:
    """Convenience wrapper; zero noise levels are floored so the weight stays finite.

    When ``max_range`` is given the closed-form unaligned solution serves as
    the fallback start for out-of-range solutions.
    """
    sys = build_noisy_system(angles, dp, max(sigma_angle, floor), max(sigma_disp, floor))
    alts = []
    if max_range is not None:
        try:
            alts.append(solve_unaligned(np.asarray(angles)[:3], np.asarray(dp)[:2]).x)
        except RellocError:
            pass
    return wtls_solve(sys, max_range=max_range, alt_inits=alts, **kw)
