from __future__ import annotations

import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from feasim import Trajectory, make_env  # noqa: E402

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

_acceptance: dict[str, str] = {}


def traj(points, trajectory_id=0, demonstrator_id=0) -> Trajectory:
    return Trajectory(tuple(tuple(float(v) for v in p) for p in points), demonstrator_id, trajectory_id)


@pytest.fixture
def grid():
    return lambda moveset="I4": make_env("grid", {"moveset": moveset})


@pytest.fixture
def i4():
    return make_env("grid", {"moveset": "I4"})


@pytest.fixture
def xi_diag():
    return traj([(0, 0), (1, 1), (2, 2), (3, 3), (4, 4)])


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.rsplit("::", 1)[-1]
    if not name.startswith("test_a"):
        return
    key = name[len("test_"):].split("_", 1)[0].upper()
    if report.when == "call" or (report.when == "setup" and report.failed):
        _acceptance[key] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_acceptance, key=lambda k: int(k[1:])):
        terminalreporter.write_line(f"{key}: {_acceptance[key]}")
