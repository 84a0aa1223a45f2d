import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from gradwave import HardwareSpec, KinematicLimits, NormMode, limits_from_hardware  # noqa: E402

settings.register_profile(
    "default",
    deadline=None,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

SCANNER = HardwareSpec(g_max=40.0, s_max=150.0, gamma=42.576)
DT = 0.004  # ms


@pytest.fixture
def scanner_limits():
    return {m: limits_from_hardware(SCANNER, m) for m in (NormMode.RV, NormMode.RIV)}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def unit_limits(alpha=1.0, beta=1.0, mode="RIV"):
    return KinematicLimits(alpha, beta, NormMode.parse(mode))


# -- acceptance summary ---------------------------------------------------------

_CRITERIA = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rsplit("::", 1)[-1]
    if "test_acceptance.py" not in report.nodeid or not name.startswith("test_criterion_"):
        return
    num = int(name.split("_")[2])
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        prev = _CRITERIA.get(num, "PASS")
        _CRITERIA[num] = "FAIL" if report.outcome == "failed" or prev == "FAIL" else (
            "SKIP" if report.outcome == "skipped" else prev
        )


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        terminalreporter.write_line(f"criterion {num:2d}: {_CRITERIA[num]}")
