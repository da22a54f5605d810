"""Angle arithmetic and conversions between sensor modalities and interior angles.

All angles are radians stored as float64. A tetrahedron is always described
from the point of view of robot ``i`` with neighbours ``j``, ``m`` and ``s``;
``P`` arrays hold the positions of j, m, s relative to i (rows in that order),
so ``P[0] = p_j - p_i = -p_ji``.

The 13 angles of one tetrahedron are kept in a fixed order, see ``ANGLE_NAMES``.
Only the two angles at i in the projected triangles are signed; the others are
magnitudes.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    CollinearProjection,
    CoplanarConfiguration,
    DegenerateAngle,
    DegenerateGeometry,
    HeightExceedsDistance,
    MissingReading,
    TriangleInequalityViolation,
)

PI = np.pi
TWO_PI = 2.0 * np.pi
E_Z = np.array([0.0, 0.0, 1.0])

ANGLE_NAMES = (
    "mji", "sji", "jmi", "jsi",          # surface triangles ijm, ijs
    "sjp", "smp", "jsp", "msp",          # projected: s'j'i, s'm'i, j's'i, m's'i
    "sij", "sim",                        # signed at i: s'ij', s'im'
    "miz", "siz", "jiz",                 # bearing vs +Z at i
)
IDX = {name: k for k, name in enumerate(ANGLE_NAMES)}
SIGNED = np.zeros(13, dtype=bool)
SIGNED[[IDX["sij"], IDX["sim"]]] = True
# the two projected triangles (i, j', s') and (i, m', s') as index triples
PROJ_TRIANGLES = ((IDX["sjp"], IDX["jsp"], IDX["sij"]), (IDX["smp"], IDX["msp"], IDX["sim"]))

_DEGEN_TOL = 1e-12


def wrap_angle(a):
    """Wrap into [-pi, pi); pi itself maps to -pi."""
    w = np.mod(np.asarray(a, dtype=float) + PI, TWO_PI) - PI
    return float(w) if np.ndim(w) == 0 else w


def rot2(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def rot_z(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def cross2(v: np.ndarray) -> np.ndarray:
    """The 2x2 block v^x = [[v1, -v2], [v2, v1]] so that v^x r = R(theta) v[:2]."""
    v = np.asarray(v, dtype=float)
    return np.array([[v[0], -v[1]], [v[1], v[0]]])


def planar_lift(v) -> np.ndarray:
    """3x3 matrix L(v) with L(v) @ (cos t, sin t, 1) = R_z(t) @ v."""
    v = np.asarray(v, dtype=float)
    return np.array([[v[0], -v[1], 0.0], [v[1], v[0], 0.0], [0.0, 0.0, v[2]]])


def lift_apply(v: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Vectorised ``planar_lift(v) @ (r, 1)`` over leading axes."""
    out = np.empty(np.broadcast_shapes(v.shape, r.shape[:-1] + (3,)))
    out[..., 0] = v[..., 0] * r[..., 0] - v[..., 1] * r[..., 1]
    out[..., 1] = v[..., 1] * r[..., 0] + v[..., 0] * r[..., 1]
    out[..., 2] = v[..., 2]
    return out


def signed_angle(b1, b2) -> float:
    """Signed angle from bearing ``b1`` to bearing ``b2``.

    The magnitude is the angle between the two unit vectors and the sign is
    positive iff ``b2 . R_z(pi/2) b1 > 0``. Raises ``DegenerateAngle`` for
    parallel or anti-parallel inputs.
    """
    b1 = np.asarray(b1, dtype=float)
    b2 = np.asarray(b2, dtype=float)
    n1, n2 = np.linalg.norm(b1), np.linalg.norm(b2)
    if n1 == 0.0 or n2 == 0.0:
        raise DegenerateAngle("zero bearing")
    b1, b2 = b1 / n1, b2 / n2
    if abs(abs(float(b1 @ b2)) - 1.0) < _DEGEN_TOL:
        raise DegenerateAngle("parallel bearings")
    mag = np.arctan2(np.linalg.norm(np.cross(b1, b2)), b1 @ b2)
    test = b1[0] * b2[1] - b1[1] * b2[0] + b1[2] * b2[2]
    return wrap_angle(mag if test > 0 else -mag)


def unsigned_angle(u, v):
    """Angle in [0, pi] between vectors along the last axis (2-d or 3-d)."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    dot = np.sum(u * v, axis=-1)
    if u.shape[-1] == 2:
        cr = np.abs(u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0])
    else:
        cr = np.linalg.norm(np.cross(u, v), axis=-1)
    return np.arctan2(cr, dot)


def planar_signed(a, b):
    """Counter-clockwise angle from 2-d vector ``a`` to ``b``, wrapped to [-pi, pi)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    cr = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    dot = a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1]
    return wrap_angle(np.arctan2(cr, dot))


# Each angle is a function of two vectors u, v that are linear in (P_j, P_m, P_s).
_CU = np.array([
    [-1, 1, 0], [-1, 0, 1], [1, -1, 0], [1, 0, -1],
    [-1, 0, 1], [0, -1, 1], [1, 0, -1], [0, 1, -1],
    [0, 0, 1], [0, 0, 1],
    [0, 1, 0], [0, 0, 1], [1, 0, 0],
], dtype=float)
_CV = np.array([
    [-1, 0, 0], [-1, 0, 0], [0, -1, 0], [0, 0, -1],
    [-1, 0, 0], [0, -1, 0], [0, 0, -1], [0, 0, -1],
    [1, 0, 0], [0, 1, 0],
    [0, 0, 0], [0, 0, 0], [0, 0, 0],
], dtype=float)
_S3 = slice(0, 4)
_S2 = slice(4, 8)
_SG = slice(8, 10)
_SZ = slice(10, 13)


def _uv(P: np.ndarray):
    U = np.einsum("ar,...rc->...ac", _CU, P)
    V = np.einsum("ar,...rc->...ac", _CV, P)
    V[..., _SZ, :] = E_Z
    return U, V


def _unsigned_grad(u, v):
    nu = np.linalg.norm(u, axis=-1, keepdims=True)
    nv = np.linalg.norm(v, axis=-1, keepdims=True)
    uh, vh = u / nu, v / nv
    c = np.sum(uh * vh, axis=-1, keepdims=True)
    s = np.sqrt(np.maximum(1.0 - c * c, 0.0))
    s = np.maximum(s, 1e-300)
    gu = -(vh - c * uh) / (nu * s)
    gv = -(uh - c * vh) / (nv * s)
    return gu, gv


def tetra_angle_array(P: np.ndarray, jacobian: bool = False):
    """The 13 angles for relative positions ``P`` of shape (..., 3, 3).

    With ``jacobian=True`` also returns d(angles)/d(P_j, P_m, P_s) with shape
    (..., 13, 9). No degeneracy checks are made here.
    """
    P = np.asarray(P, dtype=float)
    U, V = _uv(P)
    out = np.empty(P.shape[:-2] + (13,))
    out[..., _S3] = unsigned_angle(U[..., _S3, :], V[..., _S3, :])
    out[..., _S2] = unsigned_angle(U[..., _S2, :2], V[..., _S2, :2])
    out[..., _SG] = planar_signed(U[..., _SG, :2], V[..., _SG, :2])
    out[..., _SZ] = unsigned_angle(U[..., _SZ, :], V[..., _SZ, :])
    if not jacobian:
        return out
    GU = np.zeros(U.shape)
    GV = np.zeros(V.shape)
    GU[..., _S3, :], GV[..., _S3, :] = _unsigned_grad(U[..., _S3, :], V[..., _S3, :])
    GU[..., _S2, :2], GV[..., _S2, :2] = _unsigned_grad(U[..., _S2, :2], V[..., _S2, :2])
    a, b = U[..., _SG, :2], V[..., _SG, :2]
    na2 = np.sum(a * a, axis=-1, keepdims=True)
    nb2 = np.sum(b * b, axis=-1, keepdims=True)
    GU[..., _SG, 0:1] = a[..., 1:2] / na2
    GU[..., _SG, 1:2] = -a[..., 0:1] / na2
    GV[..., _SG, 0:1] = -b[..., 1:2] / nb2
    GV[..., _SG, 1:2] = b[..., 0:1] / nb2
    GU[..., _SZ, :], _ = _unsigned_grad(U[..., _SZ, :], V[..., _SZ, :])
    J = np.einsum("ar,...ac->...arc", _CU, GU) + np.einsum("ar,...ac->...arc", _CV, GV)
    return out, J.reshape(P.shape[:-2] + (13, 9))


@dataclass(frozen=True)
class TetraAngleSet:
    """The 13 angles of one tetrahedron at one instant (radians)."""

    mji: float
    sji: float
    jmi: float
    jsi: float
    sjp: float
    smp: float
    jsp: float
    msp: float
    sij: float
    sim: float
    miz: float
    siz: float
    jiz: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, f.name) for f in fields(self)])

    @classmethod
    def from_array(cls, a) -> "TetraAngleSet":
        a = np.asarray(a, dtype=float)
        if a.shape != (13,):
            raise ValueError("expected 13 angles")
        return cls(*map(float, a))


@dataclass(frozen=True)
class AzimuthElevation:
    azimuth: float
    elevation: float

    def bearing(self) -> np.ndarray:
        cb, sb = np.cos(self.azimuth), np.sin(self.azimuth)
        cg, sg = np.cos(self.elevation), np.sin(self.elevation)
        return np.array([cb * cg, sb * cg, sg])


def relative_positions(p_i, p_j, p_m, p_s) -> np.ndarray:
    p_i = np.asarray(p_i, dtype=float)
    return np.stack([np.asarray(p, dtype=float) - p_i for p in (p_j, p_m, p_s)])


def check_configuration(P: np.ndarray, rel_tol: float = 1e-9) -> None:
    """Raise if the four points are coplanar or a projected triangle is collinear."""
    scale = max(np.abs(P).max(), 1e-300)
    if abs(np.linalg.det(P)) <= rel_tol * scale**3:
        raise CoplanarConfiguration("robots are coplanar")
    h = P[:, :2]
    if np.min(np.linalg.norm(h, axis=1)) <= rel_tol * scale:
        raise CollinearProjection("a projection coincides with p_i")
    for a, b in ((0, 2), (1, 2)):
        u, v = h[a], h[b]
        area = abs(u[0] * v[1] - u[1] * v[0])
        if area <= rel_tol * scale**2 or np.linalg.norm(u - v) <= rel_tol * scale:
            raise CollinearProjection("projected triangle is collinear")


def tetra_angles(p_i, p_j, p_m, p_s) -> TetraAngleSet:
    """All 13 angles of the tetrahedron (i, j, m, s) from exact positions."""
    P = relative_positions(p_i, p_j, p_m, p_s)
    check_configuration(P)
    return TetraAngleSet.from_array(tetra_angle_array(P))


def projected_chirality(P: np.ndarray) -> int:
    """+1 when s' lies counter-clockwise of j' as seen from i, else -1."""
    u, v = P[0, :2], P[2, :2]
    return 1 if u[0] * v[1] - u[1] * v[0] > 0 else -1


def projected_angle(a: AzimuthElevation, b: AzimuthElevation, z_axis=E_Z) -> float:
    """Unsigned angle between two bearings after projection onto the plane normal to z."""
    z = np.asarray(z_axis, dtype=float)
    z = z / np.linalg.norm(z)
    u = _horizontal(a.bearing(), z)
    v = _horizontal(b.bearing(), z)
    return float(np.arctan2(np.linalg.norm(np.cross(u, v)), u @ v))


def _horizontal(b: np.ndarray, z: np.ndarray) -> np.ndarray:
    h = b - (b @ z) * z
    n = np.linalg.norm(h)
    if n < _DEGEN_TOL:
        raise DegenerateAngle("bearing parallel to the Z axis has no projection")
    return h / n


def aoa_to_interior(
    readings: Mapping,
    z_axis=E_Z,
    tetra: Sequence = ("i", "j", "m", "s"),
) -> TetraAngleSet:
    """Interior angles from azimuth/elevation readings.

    ``readings[observer][target]`` is the ``AzimuthElevation`` of ``target``
    in ``observer``'s sensor frame. Every robot of the tetrahedron must report
    the bearings it needs; sensor frames may differ in yaw but share ``z_axis``.
    """
    i, j, m, s = tetra
    z = np.asarray(z_axis, dtype=float)
    z = z / np.linalg.norm(z)

    def b(obs, tgt):
        try:
            return readings[obs][tgt].bearing()
        except KeyError as exc:
            raise MissingReading(f"no reading of {tgt!r} from {obs!r}") from exc

    def ang3(u, v):
        if abs(abs(float(u @ v)) - 1.0) < _DEGEN_TOL:
            raise DegenerateAngle("parallel bearings")
        return float(np.arctan2(np.linalg.norm(np.cross(u, v)), u @ v))

    def proj(u, v):
        hu, hv = _horizontal(u, z), _horizontal(v, z)
        return ang3(hu, hv)

    def signed_proj(u, v):
        hu, hv = _horizontal(u, z), _horizontal(v, z)
        mag = ang3(hu, hv)
        return wrap_angle(mag if z @ np.cross(hu, hv) > 0 else -mag)

    out = dict(
        mji=ang3(b(j, m), b(j, i)),
        sji=ang3(b(j, s), b(j, i)),
        jmi=ang3(b(m, j), b(m, i)),
        jsi=ang3(b(s, j), b(s, i)),
        sjp=proj(b(j, s), b(j, i)),
        smp=proj(b(m, s), b(m, i)),
        jsp=proj(b(s, j), b(s, i)),
        msp=proj(b(s, m), b(s, i)),
        sij=signed_proj(b(i, s), b(i, j)),
        sim=signed_proj(b(i, s), b(i, m)),
        miz=float(np.arccos(np.clip(b(i, m) @ z, -1.0, 1.0))),
        siz=float(np.arccos(np.clip(b(i, s) @ z, -1.0, 1.0))),
        jiz=float(np.arccos(np.clip(b(i, j) @ z, -1.0, 1.0))),
    )
    return TetraAngleSet(**out)


def _cos_rule(a: float, b: float, c: float) -> float:
    """Angle opposite side ``c`` in a triangle with sides a, b, c."""
    if not (c < a + b and a < b + c and b < a + c):
        raise TriangleInequalityViolation(f"sides {a:.6g}, {b:.6g}, {c:.6g}")
    return float(np.arccos(np.clip((a * a + b * b - c * c) / (2.0 * a * b), -1.0, 1.0)))


def distances_to_angles(dists, heights, chirality: int = 1) -> TetraAngleSet:
    """Interior angles from the six pairwise distances and per-robot heights.

    ``dists`` is a symmetric 4x4 matrix over (i, j, m, s), ``heights`` a
    length-4 vector. Distances fix the configuration only up to a mirror
    image, so the sign of the projected angles at i is taken from
    ``chirality`` (see ``projected_chirality``).
    """
    D = np.asarray(dists, dtype=float)
    h = np.asarray(heights, dtype=float)
    if D.shape != (4, 4) or h.shape != (4,):
        raise ValueError("dists must be 4x4 and heights length 4")
    iu = np.triu_indices(4, 1)
    if np.any(D[iu] <= 0.0):
        raise DegenerateGeometry("distances must be positive")
    I, J, M, S = range(4)

    def horiz(a, b):
        dh = abs(h[a] - h[b])
        if dh > D[a, b]:
            raise HeightExceedsDistance(f"|h{a} - h{b}| > l{a}{b}")
        return float(np.sqrt(max(D[a, b] ** 2 - dh * dh, 0.0)))

    def zang(a):
        elev = float(np.arcsin(min(abs(h[I] - h[a]) / D[I, a], 1.0)))
        return PI / 2 + elev * np.sign(h[I] - h[a])

    L = np.zeros((4, 4))
    for a in range(4):
        for b_ in range(a + 1, 4):
            L[a, b_] = L[b_, a] = horiz(a, b_)

    out = dict(
        mji=_cos_rule(D[J, M], D[J, I], D[M, I]),
        sji=_cos_rule(D[J, S], D[J, I], D[S, I]),
        jmi=_cos_rule(D[M, J], D[M, I], D[J, I]),
        jsi=_cos_rule(D[S, J], D[S, I], D[J, I]),
        sjp=_cos_rule(L[J, S], L[J, I], L[S, I]),
        smp=_cos_rule(L[M, S], L[M, I], L[S, I]),
        jsp=_cos_rule(L[S, J], L[S, I], L[J, I]),
        msp=_cos_rule(L[S, M], L[S, I], L[M, I]),
        miz=zang(M), siz=zang(S), jiz=zang(J),
    )
    # planar reconstruction of j', s', m' around i to attach signs
    sij_mag = _cos_rule(L[I, S], L[I, J], L[J, S])
    sim_mag = _cos_rule(L[I, S], L[I, M], L[M, S])
    lj = L[I, J]
    xs = (lj**2 + L[I, S] ** 2 - L[J, S] ** 2) / (2 * lj)
    ys = chirality * np.sqrt(max(L[I, S] ** 2 - xs**2, 0.0))
    xm = (lj**2 + L[I, M] ** 2 - L[J, M] ** 2) / (2 * lj)
    ym_abs = np.sqrt(max(L[I, M] ** 2 - xm**2, 0.0))
    cand = [np.array([xm, ym_abs]), np.array([xm, -ym_abs])]
    sp = np.array([xs, ys])
    mp = min(cand, key=lambda q: abs(np.linalg.norm(q - sp) - L[M, S]))
    out["sij"] = wrap_angle(-sij_mag if chirality > 0 else sij_mag)
    cr = sp[0] * mp[1] - sp[1] * mp[0]
    out["sim"] = wrap_angle(sim_mag if cr > 0 else -sim_mag)
    return TetraAngleSet(**out)


def distance_matrix(points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    return np.linalg.norm(points[:, None, :] - points[None, :, :], axis=-1)
