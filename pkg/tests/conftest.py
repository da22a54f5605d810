import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from relloc.errors import RellocError
from relloc.geometry import AzimuthElevation, check_configuration, tetra_angle_array
from relloc.linear import check_assumption1
from relloc.simulator.scenario import ScenarioConfig, generate_scenario

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_tetra(rng, scale=5.0, tol=0.05):
    """Relative positions P (3, 3) of j, m, s w.r.t. i that satisfy the angle assumptions."""
    while True:
        P = rng.uniform(-scale, scale, (3, 3))
        try:
            check_configuration(P)
            a = tetra_angle_array(P)
            check_assumption1(a, tol=tol)
        except RellocError:
            continue
        if np.min(np.abs(np.cos(a[10:]))) < tol:
            continue
        return P


def random_state(rng, scale=5.0):
    P = random_tetra(rng, scale)
    th = rng.uniform(-np.pi, np.pi, 3)
    return np.concatenate([-P.ravel(), np.column_stack([np.cos(th), np.sin(th)]).ravel()])


def bearing_readings(points, yaws):
    """Azimuth/elevation readings between every pair, each in its observer's yawed frame."""
    names = "ijms"
    out = {}
    for a, pa in enumerate(points):
        c, s = np.cos(yaws[a]), np.sin(yaws[a])
        Rt = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
        out[names[a]] = {}
        for b, pb in enumerate(points):
            if a == b:
                continue
            v = Rt @ (pb - pa)
            out[names[a]][names[b]] = AzimuthElevation(np.arctan2(v[1], v[0]), np.arcsin(v[2] / np.linalg.norm(v)))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def scenario():
    return generate_scenario(ScenarioConfig(instants=12), seed=3)


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
