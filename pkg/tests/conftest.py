import numpy as np
import pytest
from hypothesis import strategies as st

from camtraj.geometry import Pose, rotation_from_axis_angle
from camtraj.synth import SceneSpec, TrajectorySpec, generate


def random_rotation(rng):
    # uniform on SO(3) via a normalised Gaussian quaternion, built without the package
    q = rng.normal(size=4)
    x, y, z, w = q / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def random_pose(rng, scale=1.0):
    return Pose(random_rotation(rng), rng.normal(size=3) * scale)


seeds = st.integers(min_value=0, max_value=2**32 - 1)
rotvecs = st.lists(st.floats(-3.0, 3.0, allow_nan=False), min_size=3, max_size=3).map(np.array)


@pytest.fixture(scope="session")
def small_case():
    """Noiseless 6-frame, 32x32 synthetic case."""
    return generate(SceneSpec(seed=4), TrajectorySpec(frames=6, width=32, height=32, focal=28.0))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def axis_rotation(axis, deg):
    axis = np.asarray(axis, dtype=float)
    return rotation_from_axis_angle(axis / np.linalg.norm(axis) * np.radians(deg))


# -- acceptance summary: one pass/fail line per criterion --------------------------------

_criteria: dict[int, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.failed):
        return
    number, title = mark.args
    entry = _criteria.setdefault(number, [title, True, 0])
    entry[1] = entry[1] and rep.passed
    entry[2] += rep.when == "call"


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, ok, n = _criteria[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {title} ({n} tests)")
