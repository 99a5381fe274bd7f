from __future__ import annotations

import numpy as np
import pytest

from curvrod.geometry import ReferenceGeometry, build_frame, circle_arc, disc_mesh, line
from curvrod.material import isotropic_q3, svk

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def disc500():
    return disc_mesh(500)


@pytest.fixture(scope="session")
def disc2000():
    return disc_mesh(2000)


@pytest.fixture(scope="session")
def straight_geom(disc500):
    c = line(1.0, 101)
    return ReferenceGeometry(c, build_frame(c), disc500)


@pytest.fixture(scope="session")
def arc_geom(disc500):
    c = circle_arc(1.0, 1.0, 201)
    return ReferenceGeometry(c, build_frame(c), disc500)


@pytest.fixture(scope="session")
def svk11():
    return svk(1.0, 1.0)


@pytest.fixture(scope="session")
def iso11():
    return isotropic_q3(1.0, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line_ in ACCEPTANCE_LINES:
            terminalreporter.write_line(line_)
