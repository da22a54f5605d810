"""Angle-induced linear equations and the closed-form localizers.

Displacement arrays hold one row per robot in the order (i, j, m, s), each in
that robot's own frame; a run of ``d`` instants carries ``d - 1`` such steps,
shape (d - 1, 4, 3).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AssumptionViolated, SingularNormalEquations
from .geometry import IDX, TetraAngleSet, lift_apply

COND_LIMIT = 1e10


@dataclass(frozen=True)
class RelativeState:
    """x = (p_ji, p_mi, p_si, r_ji, r_mi, r_si) in robot i's frame."""

    p_ji: np.ndarray
    p_mi: np.ndarray
    p_si: np.ndarray
    r_ji: np.ndarray
    r_mi: np.ndarray
    r_si: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.p_ji, self.p_mi, self.p_si, self.r_ji, self.r_mi, self.r_si])

    @classmethod
    def from_vector(cls, x, normalize: bool = True) -> "RelativeState":
        x = np.asarray(x, dtype=float).copy()
        r = x[9:].reshape(3, 2)
        if normalize:
            r = r / np.linalg.norm(r, axis=1, keepdims=True)
        return cls(x[0:3], x[3:6], x[6:9], r[0], r[1], r[2])

    @property
    def positions(self) -> np.ndarray:
        return np.stack([self.p_ji, self.p_mi, self.p_si])

    @property
    def orientations(self) -> np.ndarray:
        return np.stack([self.r_ji, self.r_mi, self.r_si])


@dataclass(frozen=True)
class CoefficientTriple:
    A_j: np.ndarray
    A_m: np.ndarray
    A_s: np.ndarray

    def stacked(self) -> np.ndarray:
        return np.hstack([self.A_j, self.A_m, self.A_s])


def _angles(a) -> np.ndarray:
    return a.as_array() if isinstance(a, TetraAngleSet) else np.asarray(a, dtype=float)


def coefficient_arrays(angles) -> np.ndarray:
    """A_j, A_m, A_s for angle arrays of shape (..., 13), returned as (..., 3, 6, 3)."""
    a = np.asarray(angles, dtype=float)
    sn = np.sin
    A = np.zeros(a.shape[:-1] + (3, 6, 3))
    cj = sn(a[..., IDX["sjp"]])
    cm = sn(a[..., IDX["smp"]])
    A[..., 0, 0, 0] = cj
    A[..., 0, 1, 1] = cj
    A[..., 0, 2, 2] = np.cos(a[..., IDX["miz"]]) * sn(a[..., IDX["mji"]])
    A[..., 0, 5, 2] = np.cos(a[..., IDX["siz"]]) * sn(a[..., IDX["sji"]])
    A[..., 1, 2, 2] = -np.cos(a[..., IDX["jiz"]]) * sn(a[..., IDX["jmi"]])
    A[..., 1, 3, 0] = cm
    A[..., 1, 4, 1] = cm
    k1 = -sn(a[..., IDX["jsp"]])
    c1, s1 = np.cos(a[..., IDX["sij"]]), sn(a[..., IDX["sij"]])
    A[..., 2, 0, 0] = k1 * c1
    A[..., 2, 0, 1] = -k1 * s1
    A[..., 2, 1, 0] = k1 * s1
    A[..., 2, 1, 1] = k1 * c1
    k2 = -sn(a[..., IDX["msp"]])
    c2, s2 = np.cos(a[..., IDX["sim"]]), sn(a[..., IDX["sim"]])
    A[..., 2, 3, 0] = k2 * c2
    A[..., 2, 3, 1] = -k2 * s2
    A[..., 2, 4, 0] = k2 * s2
    A[..., 2, 4, 1] = k2 * c2
    A[..., 2, 5, 2] = -np.cos(a[..., IDX["jiz"]]) * sn(a[..., IDX["jsi"]])
    return A


def check_assumption1(angles, tol: float = 1e-9) -> None:
    a = _angles(angles)
    sines = np.abs(np.sin(a[:10]))
    if np.any(sines < tol):
        raise AssumptionViolated("an interior angle is 0 or pi (collinear projection)")
    zc = np.abs(np.cos(a[10:]))
    if np.any(zc < tol):
        raise AssumptionViolated("a neighbour lies in i's horizontal plane")


def build_coefficients(a) -> CoefficientTriple:
    """Coefficient matrices of the angle-induced equation A_j p_ji + A_m p_mi + A_s p_si = 0."""
    arr = _angles(a)
    check_assumption1(arr)
    A = coefficient_arrays(arr)
    return CoefficientTriple(A[0].copy(), A[1].copy(), A[2].copy())


@dataclass(frozen=True)
class DegeneracyReport:
    coplanar: bool
    strong_similarity: bool
    c1_a: bool  # projected triangle ij's' unchanged between k and k+1
    c1_b: bool  # projected triangle im's' unchanged
    c2_a: bool  # determinant ratio of condition (a) vanishes
    c2_b: bool
    z_spread: float
    angle_change: float

    @property
    def uniquely_solvable(self) -> bool:
        """At least one of the two projected triangles moves enough to pin the state."""
        return (not self.c1_a and not self.c2_a) or (not self.c1_b and not self.c2_b)

    @property
    def flagged(self) -> bool:
        return self.coplanar or self.strong_similarity


def detect_degeneracy(a_k, a_k1, eps1: float = 0.02, eps2: float = 0.01, eps_c: float = 1e-9) -> DegeneracyReport:
    a, b = _angles(a_k), _angles(a_k1)
    z = a[[IDX["miz"], IDX["jiz"], IDX["siz"]]]
    spread = float(max(abs(z[0] - z[1]), abs(z[0] - z[2]), abs(z[1] - z[2])))
    change = float(np.linalg.norm(a - b))
    d = b - a
    c1_a = bool(np.max(np.abs(d[[IDX["jsp"], IDX["sjp"], IDX["sij"]]])) < eps_c)
    c1_b = bool(np.max(np.abs(d[[IDX["msp"], IDX["smp"], IDX["sim"]]])) < eps_c)

    def ratio(x, y, u, v):
        return (np.sin(a[x]) * np.cos(a[y])) / (np.sin(b[x]) * np.cos(b[y])) - (
            np.sin(a[u]) * np.cos(a[v])
        ) / (np.sin(b[u]) * np.cos(b[v]))

    with np.errstate(divide="ignore", invalid="ignore"):
        ra = ratio(IDX["jsi"], IDX["jiz"], IDX["sji"], IDX["siz"])
        rb = ratio(IDX["jmi"], IDX["jiz"], IDX["mji"], IDX["miz"])
    c2_a = bool(not np.isfinite(ra) or abs(ra) < eps_c)
    c2_b = bool(not np.isfinite(rb) or abs(rb) < eps_c)
    return DegeneracyReport(spread < eps1, change < eps2, c1_a, c1_b, c2_a, c2_b, spread, change)


def _lstsq(Q: np.ndarray, q: np.ndarray, cond_limit: float = COND_LIMIT):
    sv = np.linalg.svd(Q, compute_uv=False)
    if sv[-1] <= 0.0 or (sv[0] / sv[-1]) ** 2 > cond_limit:
        raise SingularNormalEquations(f"cond(Q^T Q) = {(sv[0] / max(sv[-1], 1e-300)) ** 2:.3g}")
    sol = np.linalg.lstsq(Q, q, rcond=None)[0]
    return sol, float((sv[0] / sv[-1]) ** 2)


def _q1(Ak: np.ndarray, Ak1: np.ndarray) -> np.ndarray:
    B = np.hstack([Ak[0], Ak[1]])
    B1 = np.hstack([Ak1[0], Ak1[1]])
    return Ak1[2] - B1 @ np.linalg.solve(B, Ak[2])


def _recover_jm(Ak: np.ndarray, p_si: np.ndarray) -> np.ndarray:
    B = np.hstack([Ak[0], Ak[1]])
    return -np.linalg.solve(B, Ak[2] @ p_si)


def solve_aligned(a_k, a_k1, dp) -> tuple[np.ndarray, np.ndarray]:
    """Two-instant localizer for robots sharing a common frame.

    ``dp`` has shape (4, 3): displacements of (i, j, m, s) between k and k+1.
    Returns (positions at k, positions at k+1) as 9-vectors (p_ji, p_mi, p_si).
    """
    dp = np.asarray(dp, dtype=float)
    Ak = coefficient_arrays(_angles(a_k))
    Ak1 = coefficient_arrays(_angles(a_k1))
    Q1 = _q1(Ak, Ak1)
    rel = dp[0] - dp[1:]  # delta p_ji, delta p_mi, delta p_si
    q1 = -(Ak1[0] @ rel[0] + Ak1[1] @ rel[1] + Ak1[2] @ rel[2])
    try:
        p_si, _ = _lstsq(Q1, q1)
    except np.linalg.LinAlgError as exc:
        raise SingularNormalEquations(str(exc)) from exc
    pjm = _recover_jm(Ak, p_si)
    pk = np.concatenate([pjm, p_si])
    return pk, pk + rel.ravel()


@dataclass(frozen=True)
class UnalignedSolution:
    x: np.ndarray  # raw least-squares 15-vector, orientations not renormalised
    Q2: np.ndarray
    q2: np.ndarray
    cond: float

    def state(self) -> RelativeState:
        return RelativeState.from_vector(self.x)


def _cross_cols(A12: np.ndarray, v: np.ndarray) -> np.ndarray:
    """A[:, :2] @ v^x for a 6x2 block."""
    return np.column_stack([A12[:, 0] * v[0] + A12[:, 1] * v[1], -A12[:, 0] * v[1] + A12[:, 1] * v[0]])


def _q2_block(A0, At, S):
    """Rows Q2*, q2* relating instant 0 to instant t through cumulative displacement S (4,3)."""
    Q = np.hstack([_q1(A0, At)] + [-_cross_cols(At[c][:, :2], S[c + 1]) for c in range(3)])
    q = -(At[0] + At[1] + At[2]) @ S[0] + sum(At[c][:, 2] * S[c + 1, 2] for c in range(3))
    return Q, q


def solve_unaligned(angles, dp, cond_limit: float = COND_LIMIT) -> UnalignedSolution:
    """Three-instant localizer for robots with unknown relative yaw.

    ``angles`` has shape (3, 13) for instants k, k+1, k+2 and ``dp`` shape
    (2, 4, 3). Returns the state at k.
    """
    ang = np.asarray([_angles(a) for a in angles])
    dp = np.asarray(dp, dtype=float)
    if ang.shape != (3, 13) or dp.shape != (2, 4, 3):
        raise ValueError("need angles (3, 13) and displacements (2, 4, 3)")
    A = coefficient_arrays(ang)
    try:
        Q21, q21 = _q2_block(A[0], A[1], dp[0])
        Q22, q22 = _q2_block(A[0], A[2], dp[0] + dp[1])
    except np.linalg.LinAlgError as exc:
        raise SingularNormalEquations(str(exc)) from exc
    Q2 = np.vstack([Q21, Q22])
    q2 = np.concatenate([q21, q22])
    sol, cond = _lstsq(Q2, q2, cond_limit)
    p_si = sol[:3]
    pjm = _recover_jm(A[0], p_si)
    x = np.concatenate([pjm, p_si, sol[3:]])
    return UnalignedSolution(x, Q2, q2, cond)


def transition_positions(p: np.ndarray, r: np.ndarray, dp: np.ndarray) -> np.ndarray:
    """Positions at k+1: p_ci + dp_i - lift(dp_c)(r_ci, 1) for c in j, m, s.

    ``p`` (..., 3, 3), ``r`` (..., 3, 2), ``dp`` (..., 4, 3).
    """
    return p + dp[..., 0:1, :] - lift_apply(dp[..., 1:, :], r)


def propagate_state(x, dp) -> np.ndarray:
    """Propagate a 15-vector state one step; orientations are unchanged."""
    x = np.asarray(x, dtype=float)
    dp = np.asarray(dp, dtype=float)
    out = x.copy()
    out[:9] = transition_positions(x[:9].reshape(3, 3), x[9:].reshape(3, 2), dp).ravel()
    return out


def stacked_system(angles, dp) -> tuple[np.ndarray, np.ndarray]:
    """The 6d x 15 system A x = b over d consecutive instants.

    ``angles`` (..., d, 13), ``dp`` (..., d - 1, 4, 3). Row block t states the
    angle-induced equation at instant t with the positions written as the
    state at the first instant plus cumulative displacements.
    """
    ang = np.asarray(angles, dtype=float)
    dp = np.asarray(dp, dtype=float)
    d = ang.shape[-2]
    batch = ang.shape[:-2]
    A = coefficient_arrays(ang)  # (..., d, 3, 6, 3)
    S = np.zeros(batch + (d, 4, 3))
    if d > 1:
        S[..., 1:, :, :] = np.cumsum(dp, axis=-3)
    M = np.zeros(batch + (d, 6, 15))
    for c in range(3):
        Ac = A[..., c, :, :]
        M[..., 3 * c: 3 * c + 3] = Ac
        s = S[..., c + 1, :]
        a0, a1 = Ac[..., :, 0], Ac[..., :, 1]
        s0, s1 = s[..., 0:1], s[..., 1:2]
        M[..., 9 + 2 * c] = -(a0 * s0 + a1 * s1)
        M[..., 10 + 2 * c] = -(-a0 * s1 + a1 * s0)
    Asum = A.sum(axis=-3)
    rhs = -np.einsum("...rc,...c->...r", Asum, S[..., 0, :])
    for c in range(3):
        rhs = rhs + A[..., c, :, 2] * S[..., c + 1, 2:3]
    return M.reshape(batch + (6 * d, 15)), rhs.reshape(batch + (6 * d,))
