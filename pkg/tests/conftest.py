import numpy as np
import pytest

from cdafem.fem import build_space
from cdafem.mesh import uniform_rect_mesh

# (criterion, passed, detail) lines collected by the acceptance tests
ACCEPTANCE_LINES = []


def report(criterion: str, passed: bool, detail: str) -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def square8():
    return uniform_rect_mesh(8, 8)


@pytest.fixture(scope="session")
def p2_square8(square8):
    return build_space(square8, 2)
