import numpy as np
import pytest

from hbflow.fem import MixedSpace
from hbflow.mesh import generate_channel_mesh
from hbflow.tensor import FluidParams


@pytest.fixture(scope="session")
def space8():
    return MixedSpace(generate_channel_mesh(8, 8))


@pytest.fixture(scope="session")
def free_space4():
    """Space without the wall constraint, for interpolation identities."""
    return MixedSpace(generate_channel_mesh(4, 4, closure="box"), dirichlet=False)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


NEWTON = {1: FluidParams(1.0, 0.0, 2.0), 2: FluidParams(4.0, 0.0, 2.0)}
HETERO = {1: FluidParams(1.0, 0.05, 1.7), 2: FluidParams(3.0, 0.15, 2.0)}


# one line per acceptance criterion, collected by test_acceptance.py
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
