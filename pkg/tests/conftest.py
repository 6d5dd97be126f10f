import numpy as np
import pytest

from vsdock.geometry import CameraIntrinsics

# criterion label -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


@pytest.fixture
def K():
    return CameraIntrinsics(fx=500.0, fy=500.0, cx=640.0, cy=512.0, width=1280, height=1024)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label, (ok, detail) in ACCEPTANCE.items():
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {label}: {detail}")
