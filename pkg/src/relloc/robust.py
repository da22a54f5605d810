"""Outlier detection and mitigation for distance measurements, and sensor-failure handling.

Distance outliers
-----------------
For every edge (a, b) of a tetrahedron the distance predicted from the
previous relative state and the measured self-displacements is compared with
the measurement. An edge is an outlier when

1. its residual ``|d_meas - d_pred|`` exceeds ``n_sigma`` times the predicted
   standard deviation, and
2. the triangle test fails in both triangles that contain the edge.

The triangle test has two modes. ``"raw"`` checks the strict inequalities on
the measured distances, ``d_ab < d_ac + d_bc``. ``"residual"`` (default)
applies the same inequality to the residual magnitudes, ``|e_ab| <= |e_ac| +
|e_bc|``. It asks whether the anomaly is confined to the one edge or is shared
with its neighbours, as a genuine motion would be. A spike of a few sigma
almost never breaks the raw inequality on a tetrahedron of meter-scale edges.

Sensor failures
---------------
Readings are attributed to the robot whose sensor produced them. A sensor
that stays anomalous for ``T_f`` consecutive instants is declared failed.
Failed angle sensors are replaced through triangle sums or reciprocal
elevations, and failed ranging through the peer's measurement of the same
edge. A failed displacement sensor, or two failed sensors of one kind in one
tetrahedron, makes the tetrahedron inoperable.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import InsufficientTopology, Inoperable
from .geometry import ANGLE_NAMES, IDX, distances_to_angles, projected_chirality, tetra_angle_array
from .linear import transition_positions
from .topology import SystemTopology, is_rigid
from .wtls import refine_tetra

T_F = 5
EDGES = tuple(combinations(range(4), 2))   # tetrahedron roles (i, j, m, s) = (0, 1, 2, 3)


# ---------------------------------------------------------------- prediction

def predicted_positions(x_prev: np.ndarray, dp_prev: np.ndarray) -> np.ndarray:
    """Positions of (i, j, m, s) at k in i's frame at k, with i at the origin."""
    x_prev = np.asarray(x_prev, dtype=float)
    p = transition_positions(x_prev[:9].reshape(3, 3), x_prev[9:].reshape(3, 2), np.asarray(dp_prev, dtype=float))
    # p_ci = p_i - p_c, so robot c sits at -p_ci
    return np.vstack([np.zeros(3), -p])


def predicted_distances(x_prev: np.ndarray, dp_prev: np.ndarray) -> np.ndarray:
    q = predicted_positions(x_prev, dp_prev)
    return np.linalg.norm(q[:, None, :] - q[None, :, :], axis=-1)


def _edge_vector(x, dp):
    D = predicted_distances(x, dp.reshape(4, 3))
    return np.array([D[a, b] for a, b in EDGES])


def prediction_std(x_prev: np.ndarray, dp_prev: np.ndarray, sigma_disp: float,
                   state_cov: Optional[np.ndarray] = None, h: float = 1e-6) -> np.ndarray:
    """First-order standard deviation of the six predicted edge lengths.

    ``state_cov`` (15 x 15) is the covariance of the previous state, e.g. its
    CRLB; displacement noise is isotropic with ``sigma_disp`` per axis.
    """
    x = np.asarray(x_prev, dtype=float)
    d = np.asarray(dp_prev, dtype=float).ravel()
    Jd = np.empty((6, 12))
    for c in range(12):
        e = np.zeros(12)
        e[c] = h
        Jd[:, c] = (_edge_vector(x, d + e) - _edge_vector(x, d - e)) / (2 * h)
    var = sigma_disp**2 * np.sum(Jd * Jd, axis=1)
    if state_cov is not None:
        Jx = np.empty((6, 15))
        for c in range(15):
            e = np.zeros(15)
            e[c] = h
            Jx[:, c] = (_edge_vector(x + e, d) - _edge_vector(x - e, d)) / (2 * h)
        var = var + np.einsum("ec,cd,ed->e", Jx, np.asarray(state_cov, dtype=float), Jx)
    return np.sqrt(np.maximum(var, 0.0))


# ---------------------------------------------------------------- detection

@dataclass
class OutlierReport:
    edge: tuple                 # (a, b) roles in the tetrahedron, a < b
    k: int
    residual: float             # |d_meas - d_pred| in meters
    threshold: float
    triangles: tuple            # per containing triangle: True when the test is violated
    classification: str = "ordinary"   # ordinary | outlier | suspected-failure
    predicted: float = float("nan")
    measured: float = float("nan")

    @property
    def exceeded(self) -> bool:
        return self.residual > self.threshold

    @property
    def sensor(self) -> str:
        return f"edge:{self.edge[0]}-{self.edge[1]}"


def edge_triangles(edge: tuple, edges: Iterable[tuple]) -> list:
    """Third vertices c such that (a, c) and (b, c) are both available edges."""
    avail = {tuple(sorted(e)) for e in edges}
    a, b = edge
    verts = {v for e in avail for v in e}
    return sorted(c for c in verts - {a, b} if tuple(sorted((a, c))) in avail and tuple(sorted((b, c))) in avail)


def _check_topology(topo: Optional[SystemTopology], edges: Sequence[tuple]):
    if topo is not None:
        rig = is_rigid(topo)
        if not rig:
            raise InsufficientTopology(f"topology is not tetrahedrally angle rigid: {rig.reason}")
    for e in edges:
        if len(edge_triangles(e, edges)) < 2:
            raise InsufficientTopology(f"edge {e} lies in fewer than two triangles")


def detect_outliers(d_meas: np.ndarray, x_prev: np.ndarray, dp_prev: np.ndarray, sigma_dist: float,
                    sigma_disp: float, k: int = 0, state_cov: Optional[np.ndarray] = None,
                    topo: Optional[SystemTopology] = None, edges: Optional[Sequence[tuple]] = None,
                    mode: str = "residual", n_sigma: float = 3.0) -> list:
    """One report per available edge of the tetrahedron (roles 0..3).

    ``d_meas`` is the 4 x 4 measured distance panel at k (entries of missing
    edges are ignored), ``x_prev`` the relative state at k - 1 and
    ``dp_prev`` (4, 3) the measured displacements from k - 1 to k.
    """
    if mode not in ("residual", "raw"):
        raise ValueError(f"unknown triangle-test mode {mode!r}")
    edges = [tuple(sorted(e)) for e in (EDGES if edges is None else edges)]
    _check_topology(topo, edges)
    D = np.asarray(d_meas, dtype=float)
    Dp = predicted_distances(x_prev, dp_prev)
    std_edges = prediction_std(x_prev, dp_prev, sigma_disp, state_cov)
    std = {e: float(np.hypot(std_edges[EDGES.index(e)], sigma_dist)) for e in edges}
    res = {e: float(D[e] - Dp[e]) for e in edges}

    def key(a, b):
        return (a, b) if a < b else (b, a)

    reports = []
    for e in edges:
        a, b = e
        tri = []
        for c in edge_triangles(e, edges):
            ac, bc = key(a, c), key(b, c)
            if mode == "raw":
                tri.append(not (D[e] < D[ac] + D[bc]))
            else:
                tri.append(abs(res[e]) > abs(res[ac]) + abs(res[bc]))
        thr = n_sigma * std[e]
        rep = OutlierReport(e, k, abs(res[e]), thr, tuple(tri), predicted=float(Dp[e]), measured=float(D[e]))
        if rep.exceeded and len(tri) >= 2 and all(tri):
            rep.classification = "outlier"
        reports.append(rep)
    return reports


# ---------------------------------------------------------------- mitigation

@dataclass
class Mitigation:
    distances: np.ndarray      # corrected 4 x 4 panel
    angles: np.ndarray         # (13,) interior angles from the corrected panel, refined
    replaced: list


def mitigate_outlier(reports: Sequence[OutlierReport] | OutlierReport, x_prev: np.ndarray, dp_prev: np.ndarray,
                     d_meas: np.ndarray, heights: Optional[np.ndarray] = None) -> Mitigation:
    """Replace outlier distances by their predictions and recompute the angles.

    Heights default to the predicted vertical offsets; the mirror ambiguity of
    distances is resolved with the predicted projected chirality.
    """
    if isinstance(reports, OutlierReport):
        reports = [reports]
    D = np.array(d_meas, dtype=float)
    Dp = predicted_distances(x_prev, dp_prev)
    replaced = []
    for r in reports:
        if r.classification != "outlier":
            continue
        a, b = r.edge
        D[a, b] = D[b, a] = Dp[a, b]
        replaced.append(r.edge)
    q = predicted_positions(x_prev, dp_prev)
    h = q[:, 2] if heights is None else np.asarray(heights, dtype=float)
    chir = projected_chirality(q[1:] - q[0])
    ang = distances_to_angles(D, h, chirality=chir).as_array()
    return Mitigation(D, refine_tetra(ang), replaced)


# ---------------------------------------------------------------- sensor failures

# Angles measurable in a tetrahedron: the 13 used by the estimator plus five
# that only serve as fallbacks (face angles at i, elevations of i seen by peers).
AUX_NAMES = ("jim", "jis", "ijz", "imz", "isz")
EXT_NAMES = ANGLE_NAMES + AUX_NAMES
EXT_IDX = {n: k for k, n in enumerate(EXT_NAMES)}

OWNER = {
    "sij": 0, "sim": 0, "miz": 0, "siz": 0, "jiz": 0, "jim": 0, "jis": 0,
    "mji": 1, "sji": 1, "sjp": 1, "ijz": 1,
    "jmi": 2, "smp": 2, "imz": 2,
    "jsi": 3, "jsp": 3, "msp": 3, "isz": 3,
}

# triangles whose magnitudes sum to pi, and reciprocal elevation pairs
_TRIANGLES = (("mji", "jmi", "jim"), ("sji", "jsi", "jis"), ("sjp", "jsp", "sij"), ("smp", "msp", "sim"))
_RECIPROCAL = (("miz", "imz"), ("siz", "isz"), ("jiz", "ijz"))


def extended_angles(P: np.ndarray) -> np.ndarray:
    """The 18 extended angles for relative positions P (3, 3) of j, m, s w.r.t. i."""
    P = np.asarray(P, dtype=float)
    base = tetra_angle_array(P)

    def ang(u, v):
        return float(np.arctan2(np.linalg.norm(np.cross(u, v)), u @ v))

    z = np.array([0.0, 0.0, 1.0])
    aux = [ang(P[0], P[1]), ang(P[0], P[2]), ang(-P[0], z), ang(-P[1], z), ang(-P[2], z)]
    return np.concatenate([base, aux])


def angle_fallback(ext: np.ndarray, failed_robots: Iterable[int], signs: Optional[Mapping[str, float]] = None) -> np.ndarray:
    """Replace the readings of failed angle sensors.

    Each missing angle is recovered from a triangle whose other two angles
    come from working sensors, or from the reciprocal elevation. Signed
    projected angles keep the sign in ``signs`` (default +1 for missing entries).
    Raises Inoperable when some angle has no working source.
    """
    failed = set(int(r) for r in failed_robots)
    out = np.array(ext, dtype=float)
    signs = dict(signs or {})
    for name in EXT_NAMES:
        if OWNER[name] not in failed:
            continue
        val = None
        for tri in _TRIANGLES:
            if name in tri:
                others = [o for o in tri if o != name]
                if all(OWNER[o] not in failed for o in others):
                    val = np.pi - sum(abs(out[EXT_IDX[o]]) for o in others)
                    if name in ("sij", "sim"):
                        val *= np.sign(signs.get(name, 1.0)) or 1.0
        for a, b in _RECIPROCAL:
            if val is None and name in (a, b):
                other = b if name == a else a
                if OWNER[other] not in failed:
                    val = np.pi - out[EXT_IDX[other]]
        if val is None:
            raise Inoperable(f"no working sensor provides angle {name}")
        out[EXT_IDX[name]] = val
    return out


def range_fallback(D_obs: np.ndarray, failed_robots: Iterable[int]) -> np.ndarray:
    """Distances from the peers' side for robots whose ranging failed.

    ``D_obs[a, b]`` is robot a's measurement of edge (a, b). Raises
    Inoperable when both ends of an edge failed.
    """
    failed = set(int(r) for r in failed_robots)
    D = np.array(D_obs, dtype=float)
    n = len(D)
    for a in failed:
        for b in range(n):
            if b == a:
                continue
            if b in failed:
                raise Inoperable(f"edge ({a}, {b}) has no working ranging sensor")
            D[a, b] = D[b, a]
    return D


@dataclass
class FailureVerdict:
    sensor: str                 # "angle:r", "range:r", "disp:r" or "edge:a-b"
    failed: bool
    streak: int
    since: Optional[int] = None


@dataclass
class FailureState:
    verdicts: dict = field(default_factory=dict)
    inoperable: bool = False
    reason: str = ""
    fallbacks: list = field(default_factory=list)

    def failed(self, kind: Optional[str] = None) -> list:
        return sorted(s for s, v in self.verdicts.items() if v.failed and (kind is None or s.startswith(kind + ":")))


class FailureMonitor:
    """Per-sensor streak counter over consecutive instants."""

    def __init__(self, tetrahedra: Sequence[Sequence[int]] = ((0, 1, 2, 3),), T_f: int = T_F):
        if T_f < 1:
            raise ValueError("T_f must be >= 1")
        self.T_f = T_f
        self.tetrahedra = [tuple(int(a) for a in t) for t in tetrahedra]
        self.streak: dict = defaultdict(int)
        self.since: dict = {}
        self.state = FailureState()

    def update(self, k: int, anomalous: Iterable[str], observed: Optional[Iterable[str]] = None) -> FailureState:
        """Feed the sensors that were anomalous at instant k.

        Sensors in ``observed`` that are not anomalous reset their streak; by
        default every sensor seen so far is considered observed.
        """
        bad = set(anomalous)
        seen = set(self.streak) | bad | set(observed or ())
        for s in seen:
            if s in bad:
                if self.streak[s] == 0:
                    self.since[s] = k
                self.streak[s] += 1
            elif not self.state.verdicts.get(s, FailureVerdict(s, False, 0)).failed:
                # a failed sensor stays failed; others recover
                self.streak[s] = 0
            fail = self.streak[s] >= self.T_f or self.state.verdicts.get(s, FailureVerdict(s, False, 0)).failed
            self.state.verdicts[s] = FailureVerdict(s, fail, self.streak[s], self.since.get(s) if fail else None)
        self._judge()
        return self.state

    def _judge(self):
        st = self.state
        fb = []
        for s in st.failed():
            kind, _, who = s.partition(":")
            if kind == "disp":
                st.inoperable, st.reason = True, f"displacement sensor of robot {who} failed"
                return
            if kind == "angle":
                fb.append(f"triangle fallback for robot {who}")
            elif kind == "range":
                fb.append(f"peer ranging for robot {who}")
        for tet in self.tetrahedra:
            for kind in ("angle", "range"):
                down = [r for r in tet if f"{kind}:{r}" in st.verdicts and st.verdicts[f"{kind}:{r}"].failed]
                if len(down) >= 2:
                    st.inoperable = True
                    st.reason = f"{kind} sensors of robots {down} failed in tetrahedron {tet}"
                    return
        st.fallbacks = fb


def robots_from_edges(edge_sensors: Iterable[str]) -> list:
    """Robots shared by two or more failed edges: their ranging sensor is the common cause."""
    count: dict = defaultdict(int)
    for s in edge_sensors:
        a, b = s.partition(":")[2].split("-")
        count[int(a)] += 1
        count[int(b)] += 1
    return sorted(r for r, c in count.items() if c >= 2)


def failure_monitor(history: Sequence[Iterable], T_f: int = T_F,
                    tetrahedra: Sequence[Sequence[int]] = ((0, 1, 2, 3),)) -> FailureState:
    """Run a FailureMonitor over a history.

    ``history[k]`` is an iterable of sensor ids or OutlierReports; reports
    count as anomalous when classified as outliers. Raises Inoperable when
    the failures leave no working source.
    """
    mon = FailureMonitor(tetrahedra, T_f)
    for k, items in enumerate(history):
        bad, seen = set(), set()
        for it in items:
            if isinstance(it, OutlierReport):
                seen.add(it.sensor)
                if it.classification in ("outlier", "suspected-failure"):
                    bad.add(it.sensor)
            else:
                bad.add(str(it))
        mon.update(k, bad, seen)
    if mon.state.inoperable:
        raise Inoperable(mon.state.reason)
    return mon.state
