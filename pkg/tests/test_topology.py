import numpy as np
import pytest
from hypothesis import given, strategies as st

from relloc.errors import NoPathBetweenRobots
from relloc.geometry import rot_z
from relloc.linear import RelativeState
from relloc.topology import RelativePose, SystemTopology, Tetrahedron, compose_relative, is_rigid


def test_tetrahedron_needs_distinct_ids():
    with pytest.raises(ValueError):
        Tetrahedron((0, 1, 1, 2))


def test_rigidity_chain():
    assert is_rigid(SystemTopology(5, ((0, 1, 2, 3), (1, 2, 3, 4))))
    res = is_rigid(SystemTopology(7, ((0, 1, 2, 3), (3, 4, 5, 6))))
    assert not res and "share fewer than two" in res.reason
    assert not is_rigid(SystemTopology(5, ((0, 1, 2, 3),)))


@given(st.floats(-3, 3), st.floats(-3, 3), st.lists(st.floats(-5, 5), min_size=6, max_size=6))
def test_pose_inverse_and_compose(y1, y2, v):
    a = RelativePose(0, 1, np.array(v[:3]), y1)
    b = RelativePose(1, 2, np.array(v[3:]), y2)
    ident = a.compose(a.inverse())
    assert np.allclose(ident.position, 0.0, atol=1e-9) and abs(np.sin(ident.yaw)) < 1e-9
    ab = a.compose(b)
    assert np.allclose(ab.position, np.array(v[:3]) + rot_z(y1) @ np.array(v[3:]))


def _state_for(pos, yaw, tet):
    i = tet[0]
    Ri = rot_z(yaw[i]).T
    p = [Ri @ (pos[i] - pos[c]) for c in tet[1:]]
    r = [np.array([np.cos(yaw[c] - yaw[i]), np.sin(yaw[c] - yaw[i])]) for c in tet[1:]]
    return RelativeState(*p, *r)


def test_compose_across_tetrahedra(rng):
    pos = rng.uniform(-5, 5, (6, 3))
    yaw = rng.uniform(-np.pi, np.pi, 6)
    topo = SystemTopology(6, ((0, 1, 2, 3), (2, 3, 4, 5)))
    states = [_state_for(pos, yaw, t.ids) for t in topo.tetrahedra]
    pose = compose_relative(topo, states, 1, 5)
    want = rot_z(yaw[1]).T @ (pos[5] - pos[1])
    assert np.allclose(pose.position, want, atol=1e-9)
    assert np.isclose(np.cos(pose.yaw - (yaw[5] - yaw[1])), 1.0)


def test_no_path():
    topo = SystemTopology(8, ((0, 1, 2, 3), (4, 5, 6, 7)))
    st_ = RelativeState(*(np.ones(3),) * 3, *(np.array([1.0, 0.0]),) * 3)
    with pytest.raises(NoPathBetweenRobots):
        compose_relative(topo, {0: st_}, 0, 5)
