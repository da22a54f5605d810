"""Seeded waypoint scenarios inside a cube."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import ExcitationFailure, RellocError
from ..geometry import check_configuration, relative_positions, rot_z, tetra_angle_array
from ..linear import check_assumption1, detect_degeneracy, solve_unaligned
from ..topology import SystemTopology, Tetrahedron


@dataclass(frozen=True)
class ScenarioConfig:
    n_robots: int = 4
    space: float = 10.0            # cube edge length in meters
    instants: int = 12
    step_min: float = 0.3          # per-step displacement magnitude range
    step_max: float = 0.5
    height_bands: bool = True      # give every robot its own height band
    band_gap: float = 1.0          # vertical gap between robot height bands
    aligned: bool = False          # all frame yaws zero
    tetrahedra: tuple = ((0, 1, 2, 3),)
    min_sin: float = 0.05          # margin on the sines of the linear-equation angles
    min_cos_z: float = 0.02        # margin on |cos| of the vertical angles
    eps1: float = 0.02
    eps2: float = 0.01
    jitter: float = 1.5            # heading noise relative to the waypoint direction
    max_cond: float = 1e8          # excitation limit on cond(Q2' Q2) over every 3-instant run
    max_retries: int = 200

    def __post_init__(self):
        if self.n_robots < 4:
            raise ValueError("need at least 4 robots")
        if self.space <= 0 or self.instants < 2:
            raise ValueError("space must be positive and instants >= 2")
        if self.step_min < 0 or self.step_max < self.step_min:
            raise ValueError("invalid step range")

    @property
    def half_width(self) -> float:
        return 0.5 * self.space

    def topology(self) -> SystemTopology:
        return SystemTopology(self.n_robots, tuple(Tetrahedron(tuple(t)) for t in self.tetrahedra))


@dataclass
class Scenario:
    seed: int
    cfg: ScenarioConfig
    positions: np.ndarray      # (T, n, 3) global
    yaws: np.ndarray           # (n,) frame yaw of every robot
    waypoints: list            # per robot (w, 3)
    speeds: np.ndarray         # (n,) per-step displacement bound
    retries: int = 0

    @property
    def T(self) -> int:
        return self.positions.shape[0]

    @property
    def topology(self) -> SystemTopology:
        return self.cfg.topology()

    def displacements(self) -> np.ndarray:
        """(T - 1, n, 3) self-displacements, each in its robot's own frame."""
        d = np.diff(self.positions, axis=0)
        out = np.empty_like(d)
        for a in range(self.positions.shape[1]):
            out[:, a] = d[:, a] @ rot_z(self.yaws[a])
        return out

    def true_state(self, k: int, tet=(0, 1, 2, 3)) -> np.ndarray:
        """15-vector relative state of tetrahedron ``tet`` at instant k."""
        i, *others = tet
        Ri = rot_z(self.yaws[i]).T
        p = [Ri @ (self.positions[k, i] - self.positions[k, c]) for c in others]
        r = [[np.cos(self.yaws[c] - self.yaws[i]), np.sin(self.yaws[c] - self.yaws[i])] for c in others]
        return np.concatenate([np.ravel(p), np.ravel(r)])

    def true_states(self, tet=(0, 1, 2, 3)) -> np.ndarray:
        return np.array([self.true_state(k, tet) for k in range(self.T)])

    def exact_angles(self, tet=(0, 1, 2, 3)) -> np.ndarray:
        """(T, 13) noise-free angles; positions expressed in robot i's frame."""
        i = tet[0]
        Ri = rot_z(self.yaws[i]).T
        out = []
        for k in range(self.T):
            P = relative_positions(*(self.positions[k, a] for a in tet)) @ Ri.T
            out.append(tetra_angle_array(P))
        return np.array(out)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for a in (self.positions, self.yaws, self.speeds):
            h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
        return h.hexdigest()


def _height_bands(n: int, space: float, gap: float):
    """Disjoint vertical bands, one per robot, so vertical angles stay away from 90 degrees."""
    half = 0.5 * space
    gap = min(gap, space / (2 * n))
    width = (space - (n - 1) * gap) / n
    lows = -half + np.arange(n) * (width + gap)
    return np.column_stack([lows, lows + width])


def _trajectory(rng, start, speed_range, T, half, band, jitter):
    pos = [start]
    wps = []

    def new_wp():
        w = rng.uniform(-half, half, 3)
        w[2] = rng.uniform(*band)
        wps.append(w)
        return w

    target = new_wp()
    p = start.copy()
    lo = np.array([-half, -half, band[0]])
    hi = np.array([half, half, band[1]])
    for _ in range(T - 1):
        speed = rng.uniform(*speed_range)
        while np.linalg.norm(target - p) <= speed:
            target = new_wp()
        u = (target - p) / np.linalg.norm(target - p)
        # heading jitter keeps consecutive displacements distinct
        u = u + jitter * rng.standard_normal(3)
        u /= np.linalg.norm(u)
        p = np.clip(p + speed * u, lo, hi)
        pos.append(p)
    return np.array(pos), np.array(wps)


def _geometry_ok(sc_pos: np.ndarray, yaws: np.ndarray, cfg: ScenarioConfig) -> bool:
    for tet in cfg.tetrahedra:
        i = tet[0]
        Ri = rot_z(yaws[i]).T
        prev = None
        for k in range(sc_pos.shape[0]):
            P = relative_positions(*(sc_pos[k, a] for a in tet)) @ Ri.T
            try:
                check_configuration(P)
                a = tetra_angle_array(P)
                check_assumption1(a, tol=cfg.min_sin)
            except RellocError:
                return False
            if np.min(np.abs(np.cos(a[10:]))) < cfg.min_cos_z:
                return False
            if prev is not None:
                rep = detect_degeneracy(prev, a, cfg.eps1, cfg.eps2)
                if rep.flagged or not rep.uniquely_solvable:
                    return False
            prev = a
        dp = np.diff(sc_pos[:, list(tet)], axis=0)
        for a_ in range(4):
            dp[:, a_] = dp[:, a_] @ rot_z(yaws[tet[a_]])
        ang = np.array([tetra_angle_array(relative_positions(*(sc_pos[k, a] for a in tet)) @ Ri.T) for k in range(sc_pos.shape[0])])
        for k in range(sc_pos.shape[0] - 2):
            try:
                solve_unaligned(ang[k: k + 3], dp[k: k + 2], cond_limit=cfg.max_cond)
            except RellocError:
                return False
    return True


def generate_scenario(cfg: ScenarioConfig = ScenarioConfig(), seed: int = 0) -> Scenario:
    """Seeded waypoint trajectories for every robot.

    Each robot moves at its own constant per-step speed drawn from
    [step_min, step_max] towards random waypoints inside its height band.
    Draws repeat until the exact geometry passes every degeneracy monitor.
    """
    if cfg.step_max <= 0.0:
        raise ExcitationFailure("static scenario: robots must move for the states to be observable")
    rng = np.random.default_rng(seed)
    half = cfg.half_width
    if cfg.height_bands:
        bands = _height_bands(cfg.n_robots, cfg.space, cfg.band_gap)
    else:
        bands = np.tile([-half, half], (cfg.n_robots, 1))
    for attempt in range(cfg.max_retries):
        order = rng.permutation(cfg.n_robots)
        speeds = rng.uniform(cfg.step_min, cfg.step_max, cfg.n_robots)
        yaws = np.zeros(cfg.n_robots) if cfg.aligned else rng.uniform(-np.pi, np.pi, cfg.n_robots)
        trajs, wps = [], []
        for a in range(cfg.n_robots):
            band = bands[order[a]]
            start = rng.uniform(-half, half, 3)
            start[2] = rng.uniform(*band)
            lo_speed = max(cfg.step_min, 0.5 * speeds[a])
            tr, w = _trajectory(rng, start, (lo_speed, speeds[a]), cfg.instants, half, band, cfg.jitter)
            trajs.append(tr)
            wps.append(w)
        pos = np.stack(trajs, axis=1)
        if _geometry_ok(pos, yaws, cfg):
            return Scenario(seed, cfg, pos, yaws, wps, speeds, attempt)
    raise ExcitationFailure(f"no admissible scenario after {cfg.max_retries} draws")
