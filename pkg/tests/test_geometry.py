import numpy as np
import pytest
from hypothesis import given, strategies as st

from relloc.errors import (CoplanarConfiguration, DegenerateAngle, HeightExceedsDistance, MissingReading,
                           TriangleInequalityViolation)
from relloc.geometry import (ANGLE_NAMES, IDX, PROJ_TRIANGLES, AzimuthElevation, TetraAngleSet, aoa_to_interior,
                             check_configuration, distance_matrix, distances_to_angles, projected_chirality,
                             signed_angle, tetra_angle_array, tetra_angles, wrap_angle)

from conftest import bearing_readings, random_tetra


class TestWrap:
    @given(st.floats(-1e3, 1e3))
    def test_range(self, a):
        w = wrap_angle(a)
        assert -np.pi <= w < np.pi
        assert np.isclose(np.cos(w), np.cos(a), atol=1e-9) and np.isclose(np.sin(w), np.sin(a), atol=1e-9)

    def test_pi_maps_to_minus_pi(self):
        assert wrap_angle(np.pi) == -np.pi


class TestSignedAngle:
    def test_quarter_turn(self):
        assert np.isclose(signed_angle([1, 0, 0], [0, 1, 0]), np.pi / 2)
        assert np.isclose(signed_angle([0, 1, 0], [1, 0, 0]), -np.pi / 2)

    def test_parallel_raises(self):
        with pytest.raises(DegenerateAngle):
            signed_angle([1, 0, 0], [2, 0, 0])


class TestTetraAngles:
    def test_layout(self):
        assert len(ANGLE_NAMES) == 13 and IDX["sij"] == 8 and IDX["jiz"] == 12

    def test_regular_tetrahedron_faces(self):
        # regular tetrahedron: every face angle is 60 degrees
        v = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float)
        a = tetra_angles(*v)
        for name in ("mji", "sji", "jmi", "jsi"):
            assert np.isclose(getattr(a, name), np.pi / 3)

    def test_projected_triangles_sum_to_pi(self, rng):
        for _ in range(200):
            a = tetra_angle_array(random_tetra(rng))
            for tri in PROJ_TRIANGLES:
                assert np.isclose(np.sum(np.abs(a[list(tri)])), np.pi, atol=1e-12)

    def test_scale_and_yaw_invariance(self, rng):
        P = random_tetra(rng)
        a = tetra_angle_array(P)
        assert np.allclose(tetra_angle_array(3.7 * P), a, atol=1e-12)

    def test_vertical_angles(self):
        P = np.array([[1.0, 0, 1.0], [0, 1.0, -1.0], [-1.0, -1.0, 0.5]])
        a = tetra_angle_array(P)
        assert np.isclose(a[IDX["jiz"]], np.pi / 4)
        assert np.isclose(a[IDX["miz"]], 3 * np.pi / 4)

    def test_batched_matches_single(self, rng):
        Ps = np.array([random_tetra(rng) for _ in range(5)])
        assert np.allclose(tetra_angle_array(Ps), [tetra_angle_array(P) for P in Ps])

    def test_jacobian_matches_finite_differences(self, rng):
        P = random_tetra(rng)
        a, J = tetra_angle_array(P, jacobian=True)
        h = 1e-6
        fd = np.empty((13, 9))
        for c in range(9):
            e = np.zeros(9)
            e[c] = h
            fd[:, c] = (tetra_angle_array(P + e.reshape(3, 3)) - tetra_angle_array(P - e.reshape(3, 3))) / (2 * h)
        assert np.max(np.abs(fd - J)) / np.max(np.abs(J)) < 1e-6

    def test_coplanar_rejected(self):
        with pytest.raises(CoplanarConfiguration):
            check_configuration(np.array([[1.0, 0, 0], [0, 1.0, 0], [1.0, 1.0, 0]]))

    def test_roundtrip_array(self, rng):
        a = tetra_angle_array(random_tetra(rng))
        assert np.array_equal(TetraAngleSet.from_array(a).as_array(), a)


class TestConversions:
    def test_aoa_roundtrip(self, rng):
        for _ in range(50):
            P = random_tetra(rng)
            pts = np.vstack([np.zeros(3), P]) + rng.uniform(-3, 3, 3)
            yaws = rng.uniform(-np.pi, np.pi, 4)
            got = aoa_to_interior(bearing_readings(pts, yaws)).as_array()
            # readings in yawed frames give angles in i's frame; yaw i rotates P
            c, s = np.cos(yaws[0]), np.sin(yaws[0])
            Rt = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
            want = tetra_angle_array(P @ Rt.T)
            assert np.max(np.abs(wrap_angle(got - want))) < 1e-9

    def test_aoa_missing_reading(self, rng):
        P = random_tetra(rng)
        rd = bearing_readings(np.vstack([np.zeros(3), P]), np.zeros(4))
        del rd["j"]["m"]
        with pytest.raises(MissingReading):
            aoa_to_interior(rd)

    def test_distance_roundtrip(self, rng):
        for _ in range(100):
            P = random_tetra(rng)
            pts = np.vstack([np.zeros(3), P])
            got = distances_to_angles(distance_matrix(pts), pts[:, 2], projected_chirality(P)).as_array()
            assert np.max(np.abs(wrap_angle(got - tetra_angle_array(P)))) < 1e-9

    def test_distance_errors(self):
        pts = np.array([[0, 0, 0], [1, 0, 0.2], [0, 1, 0.4], [1, 1, 1.0]])
        D = distance_matrix(pts)
        with pytest.raises(HeightExceedsDistance):
            distances_to_angles(D, np.array([0, 5.0, 0, 0]))
        D2 = D.copy()
        D2[1, 2] = D2[2, 1] = 10.0
        with pytest.raises(TriangleInequalityViolation):
            distances_to_angles(D2, pts[:, 2])
