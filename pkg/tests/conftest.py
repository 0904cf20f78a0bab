import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from scfusion.geometry import CameraIntrinsics, CoordStateMap, Pose  # noqa: E402


def random_pose(rng, max_angle=np.pi, max_t=2.0) -> Pose:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return Pose.from_rotvec(axis * rng.uniform(0, max_angle), rng.uniform(-max_t, max_t, 3))


def random_map(rng, h=6, w=7, valid_frac=0.8, stride=1, log_var=(-8.0, 0.0)) -> CoordStateMap:
    coords = rng.normal(size=(h, w, 3))
    logvar = rng.uniform(*log_var, size=(h, w))
    valid = rng.random((h, w)) < valid_frac
    return CoordStateMap(coords, logvar, valid, stride)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def camera():
    return CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_RESULTS: dict = {}


def record_acceptance(number: int, title: str, passed: bool, detail: str) -> None:
    line = f"ACCEPTANCE {number} {'PASS' if passed else 'FAIL'} - {title}: {detail}"
    ACCEPTANCE_RESULTS[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_RESULTS):
            terminalreporter.write_line(ACCEPTANCE_RESULTS[n])
