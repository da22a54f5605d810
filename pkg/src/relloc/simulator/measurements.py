"""Noisy measurement synthesis and the NDJSON measurement log."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from ..geometry import SIGNED, distance_matrix, wrap_angle
from ..map_estimator import NoiseConfig
from .scenario import Scenario


@dataclass(frozen=True)
class OutlierSpike:
    """Additive spike of ``magnitude`` distance-noise sigmas on edge (a, b) at instant k."""

    edge: tuple
    k: int
    magnitude: float = 10.0


@dataclass
class MeasurementFrame:
    k: int
    angles: dict                       # tetra index -> (13,)
    dp: Optional[np.ndarray]           # (n, 3) displacement k -> k+1, own frames; None at the last instant
    distances: Optional[np.ndarray] = None  # (n, n) symmetric
    sigma_angle: float = 0.0
    sigma_disp: float = 0.0
    sigma_dist: float = 0.0
    corrupted: list = field(default_factory=list)

    def to_records(self) -> list:
        out = []
        for t, a in self.angles.items():
            rec = {
                "k": self.k,
                "tetra_id": int(t),
                "angles": [float(v) for v in a],
                "displacements": None if self.dp is None else self.dp.tolist(),
                "sigma_angle": self.sigma_angle,
                "sigma_disp": self.sigma_disp,
            }
            if self.distances is not None:
                rec["distances"] = self.distances.tolist()
                rec["sigma_dist"] = self.sigma_dist
            out.append(rec)
        return out


def synthesize_measurements(sc: Scenario, noise: NoiseConfig, outliers: Sequence[OutlierSpike] = (),
                            sigma_dist: Optional[float] = None, rng: Optional[np.random.Generator] = None,
                            seed: Optional[int] = None) -> list:
    """Exact geometry plus i.i.d. Gaussian noise per element.

    Angles carry N(0, sigma_angle^2) and are wrapped; displacements carry
    N(0, sigma_disp^2) per axis. With ``sigma_dist`` set, a symmetric distance
    panel with its own noise is added and ``outliers`` spike single entries.
    """
    if rng is None:
        rng = np.random.default_rng(sc.seed if seed is None else seed)
    tets = sc.cfg.tetrahedra
    exact = [sc.exact_angles(t) for t in tets]
    dps = sc.displacements()
    n = sc.positions.shape[1]
    spikes = {}
    for o in outliers:
        a, b = sorted(int(v) for v in o.edge)
        spikes.setdefault(int(o.k), []).append((a, b, float(o.magnitude)))
    frames = []
    for k in range(sc.T):
        angles = {}
        for t, ex in enumerate(exact):
            noisy = ex[k] + rng.normal(0.0, noise.sigma_angle, 13) if noise.sigma_angle > 0 else ex[k].copy()
            # unsigned magnitudes stay as drawn; signed angles are wrapped
            noisy[SIGNED] = wrap_angle(noisy[SIGNED])
            angles[t] = noisy
        dp = None
        if k < sc.T - 1:
            dp = dps[k] + (rng.normal(0.0, noise.sigma_disp, (n, 3)) if noise.sigma_disp > 0 else 0.0)
        D = None
        corrupted = []
        if sigma_dist is not None:
            D = distance_matrix(sc.positions[k])
            iu = np.triu_indices(n, 1)
            e = rng.normal(0.0, sigma_dist, len(iu[0])) if sigma_dist > 0 else np.zeros(len(iu[0]))
            D[iu] += e
            for a, b, mag in spikes.get(k, []):
                D[a, b] += mag * sigma_dist
                corrupted.append((a, b))
            D[(iu[1], iu[0])] = D[iu]
        frames.append(MeasurementFrame(k, angles, dp, D, noise.sigma_angle, noise.sigma_disp,
                                       0.0 if sigma_dist is None else sigma_dist, corrupted))
    return frames


def tetra_stream(frames: Sequence[MeasurementFrame], tet: Sequence[int], tetra_id: int = 0):
    """(angles (T, 13), dp (T - 1, 4, 3)) for one tetrahedron, robot order (i, j, m, s)."""
    angles = np.array([f.angles[tetra_id] for f in frames])
    dp = np.array([f.dp[list(tet)] for f in frames[:-1]])
    return angles, dp


def write_log(path, frames: Iterable[MeasurementFrame]) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("w") as fh:
        for f in frames:
            for rec in f.to_records():
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    tmp.replace(path)


def read_log(path) -> list:
    """Rebuild MeasurementFrames from an NDJSON log."""
    by_k: dict = {}
    with Path(path).open() as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            k = int(rec["k"])
            f = by_k.get(k)
            if f is None:
                dp = rec.get("displacements")
                D = rec.get("distances")
                f = MeasurementFrame(k, {}, None if dp is None else np.array(dp, dtype=float),
                                     None if D is None else np.array(D, dtype=float),
                                     rec.get("sigma_angle", 0.0), rec.get("sigma_disp", 0.0), rec.get("sigma_dist", 0.0))
                by_k[k] = f
            f.angles[int(rec["tetra_id"])] = np.array(rec["angles"], dtype=float)
    return [by_k[k] for k in sorted(by_k)]
