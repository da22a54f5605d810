import numpy as np
import pytest

from relloc.errors import Inoperable, InsufficientTopology
from relloc.geometry import distance_matrix
from relloc.robust import (EXT_IDX, OWNER, FailureMonitor, angle_fallback, detect_outliers, extended_angles,
                           failure_monitor, mitigate_outlier, predicted_distances, range_fallback)
from relloc.simulator.experiments import RobustConfig, failure_demo, outlier_demo
from relloc.topology import SystemTopology

from conftest import random_tetra


def _instant(scenario, k=3):
    D = distance_matrix(scenario.positions[k][:4])
    return D, scenario.true_state(k - 1), scenario.displacements()[k - 1][:4]


def test_prediction_exact(scenario):
    D, x, dp = _instant(scenario)
    assert np.allclose(predicted_distances(x, dp), D, atol=1e-12)


def test_spike_detected_and_mitigated(scenario):
    D, x, dp = _instant(scenario)
    D[0, 2] += 1.0
    D[2, 0] = D[0, 2]
    reps = detect_outliers(D, x, dp, 0.05, 0.01, k=3)
    flagged = [r.edge for r in reps if r.classification == "outlier"]
    assert flagged == [(0, 2)]
    mit = mitigate_outlier(reps, x, dp, D)
    assert mit.replaced == [(0, 2)]
    assert np.allclose(mit.angles, scenario.exact_angles()[3], atol=1e-8)


def test_clean_panel_has_no_outliers(scenario):
    D, x, dp = _instant(scenario)
    assert not any(r.classification == "outlier" for r in detect_outliers(D, x, dp, 0.05, 0.01))


def test_insufficient_topology(scenario):
    D, x, dp = _instant(scenario)
    with pytest.raises(InsufficientTopology):
        detect_outliers(D, x, dp, 0.05, 0.01, edges=[(0, 1), (0, 2), (1, 2), (2, 3)])
    with pytest.raises(InsufficientTopology):
        detect_outliers(D, x, dp, 0.05, 0.01, topo=SystemTopology(7, ((0, 1, 2, 3), (3, 4, 5, 6))))


def test_angle_fallback_recovers(rng):
    for _ in range(50):
        P = random_tetra(rng)
        ext = extended_angles(P)
        signs = {n: np.sign(ext[EXT_IDX[n]]) for n in ("sij", "sim")}
        for r in range(4):
            bad = ext.copy()
            bad[[i for n, i in EXT_IDX.items() if OWNER[n] == r]] = np.nan
            assert np.allclose(angle_fallback(bad, [r], signs), ext, atol=1e-9)


def test_angle_fallback_two_failures():
    P = np.array([[1.0, 2.0, 0.5], [-2.0, 1.0, 1.0], [0.5, -1.5, 2.0]])
    with pytest.raises(Inoperable):
        angle_fallback(extended_angles(P), [0, 1])


def test_range_fallback():
    D = np.arange(16.0).reshape(4, 4)
    out = range_fallback(D, [1])
    assert np.array_equal(out[1, [0, 2, 3]], D[[0, 2, 3], 1])
    assert np.array_equal(out[0], D[0])
    with pytest.raises(Inoperable):
        range_fallback(D, [1, 2])


def test_monitor_streaks():
    mon = FailureMonitor(T_f=3)
    for k in range(2):
        st = mon.update(k, ["angle:1"])
    assert not st.failed()
    st = mon.update(2, [], ["angle:1"])
    assert mon.streak["angle:1"] == 0
    for k in range(3, 6):
        st = mon.update(k, ["angle:1"])
    assert st.failed() == ["angle:1"] and not st.inoperable
    assert st.fallbacks == ["triangle fallback for robot 1"]
    st = mon.update(6, [], ["angle:1"])
    assert st.failed() == ["angle:1"]


def test_monitor_inoperable():
    with pytest.raises(Inoperable):
        failure_monitor([["disp:2"]] * 5)
    with pytest.raises(Inoperable):
        failure_monitor([["range:1", "range:3"]] * 5)
    assert failure_monitor([["range:1"]] * 5).failed("range") == ["range:1"]


def test_outlier_demo_small():
    res = outlier_demo(RobustConfig(trials=40, seed=1))
    assert res.detection_rate >= 0.9
    assert res.false_positive_rate <= 0.05


@pytest.mark.parametrize("kind,robots", [("angle", (1,)), ("range", (2,)), ("disp", (1,)), ("angle", (1, 2))])
def test_failure_demo(kind, robots):
    res = failure_demo(kind, robots, RobustConfig(seed=0, instants=14))
    assert res.as_expected, res.log
