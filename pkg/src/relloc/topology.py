"""Measurement topology, tetrahedral angle rigidity and pose composition."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import NoPathBetweenRobots
from .geometry import rot_z, wrap_angle
from .linear import RelativeState


@dataclass(frozen=True)
class Tetrahedron:
    """Four distinct robots; ``ids[0]`` is the observing robot i."""

    ids: tuple

    def __post_init__(self):
        ids = tuple(int(a) for a in self.ids)
        if len(ids) != 4 or len(set(ids)) != 4:
            raise ValueError(f"tetrahedron needs four distinct robots, got {self.ids}")
        object.__setattr__(self, "ids", ids)

    @property
    def i(self) -> int:
        return self.ids[0]

    def shared(self, other: "Tetrahedron") -> int:
        return len(set(self.ids) & set(other.ids))


@dataclass(frozen=True)
class SystemTopology:
    n_robots: int
    tetrahedra: tuple

    def __post_init__(self):
        tets = tuple(t if isinstance(t, Tetrahedron) else Tetrahedron(tuple(t)) for t in self.tetrahedra)
        object.__setattr__(self, "tetrahedra", tets)
        for t in tets:
            if max(t.ids) >= self.n_robots or min(t.ids) < 0:
                raise ValueError(f"robot id out of range in {t.ids}")

    @property
    def robots(self) -> frozenset:
        return frozenset(range(self.n_robots))

    @property
    def comm_edges(self) -> frozenset:
        """Pairs that must communicate: all pairs inside some tetrahedron."""
        out = set()
        for t in self.tetrahedra:
            for a in t.ids:
                for b in t.ids:
                    if a < b:
                        out.add((a, b))
        return frozenset(out)


@dataclass
class RigidityResult:
    rigid: bool
    witness: list = field(default_factory=list)  # tetrahedron indices in chain order
    reason: str = ""

    def __bool__(self) -> bool:
        return self.rigid


def is_rigid(topo: SystemTopology) -> RigidityResult:
    """Greedy chain search over the 'shares at least two vertices' adjacency.

    Starting from the first tetrahedron, any tetrahedron sharing two or more
    vertices with one already in the chain is appended. Rigid iff the chain
    reaches every tetrahedron and every robot.
    """
    tets = topo.tetrahedra
    if not tets:
        return RigidityResult(False, [], "no tetrahedra")
    order = [0]
    seen = {0}
    queue = deque([0])
    while queue:
        a = queue.popleft()
        for b in range(len(tets)):
            if b not in seen and tets[a].shared(tets[b]) >= 2:
                seen.add(b)
                order.append(b)
                queue.append(b)
    if len(order) < len(tets):
        missing = sorted(set(range(len(tets))) - seen)
        return RigidityResult(False, order, f"tetrahedra {missing} share fewer than two vertices with the chain")
    covered = set().union(*(set(tets[k].ids) for k in order))
    if covered != set(topo.robots):
        return RigidityResult(False, order, f"robots {sorted(set(topo.robots) - covered)} not covered")
    return RigidityResult(True, order, "")


@dataclass(frozen=True)
class RelativePose:
    """Pose of robot b in robot a's frame: position of b and yaw theta_b - theta_a."""

    a: int
    b: int
    position: np.ndarray
    yaw: float

    @property
    def p(self) -> np.ndarray:
        """p_ba = p_a - p_b expressed in a's frame."""
        return -self.position

    @property
    def r(self) -> np.ndarray:
        return np.array([np.cos(self.yaw), np.sin(self.yaw)])

    def inverse(self) -> "RelativePose":
        return RelativePose(self.b, self.a, -rot_z(-self.yaw) @ self.position, wrap_angle(-self.yaw))

    def compose(self, other: "RelativePose") -> "RelativePose":
        """(a -> b) then (b -> c) gives a -> c."""
        if other.a != self.b:
            raise ValueError("poses do not chain")
        return RelativePose(self.a, other.b, self.position + rot_z(self.yaw) @ other.position, wrap_angle(self.yaw + other.yaw))


def tetra_edges(tet: Tetrahedron, state: RelativeState) -> list:
    """Poses of j, m, s in i's frame from one tetrahedron's relative state."""
    out = []
    for c, pos, r in zip(tet.ids[1:], state.positions, state.orientations):
        out.append(RelativePose(tet.i, c, -np.asarray(pos, dtype=float), float(np.arctan2(r[1], r[0]))))
    return out


def compose_relative(topo: SystemTopology, states: Mapping[int, RelativeState] | Sequence[RelativeState], a: int, b: int) -> RelativePose:
    """Pose of robot b in robot a's frame through a shortest chain of tetra edges.

    ``states[t]`` is the relative state estimated for ``topo.tetrahedra[t]``.
    Only tetrahedra with a state contribute edges.
    """
    if isinstance(states, Mapping):
        items = states.items()
    else:
        items = enumerate(states)
    adj: dict = {}
    for t, st in items:
        if st is None:
            continue
        for e in tetra_edges(topo.tetrahedra[t], st):
            adj.setdefault(e.a, []).append(e)
            adj.setdefault(e.b, []).append(e.inverse())
    if a == b:
        return RelativePose(a, a, np.zeros(3), 0.0)
    prev: dict = {a: None}
    queue = deque([a])
    while queue:
        u = queue.popleft()
        if u == b:
            break
        for e in adj.get(u, []):
            if e.b not in prev:
                prev[e.b] = e
                queue.append(e.b)
    if b not in prev:
        raise NoPathBetweenRobots(f"no chain connects robots {a} and {b}")
    chain = []
    v = b
    while prev[v] is not None:
        chain.append(prev[v])
        v = prev[v].a
    pose = chain.pop()
    while chain:
        pose = pose.compose(chain.pop())
    return pose


def relative_state_from_poses(tet: Tetrahedron, poses: Iterable[RelativePose]) -> RelativeState:
    """Pack three poses (i -> j, m, s) back into a RelativeState."""
    poses = list(poses)
    return RelativeState(*(p.p for p in poses), *(p.r for p in poses))
