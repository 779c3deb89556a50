import numpy as np
import pytest

from gmmcme import complex_linalg as cl

ACCEPTANCE_LINES: list[str] = []


def random_psd(rng, n, floor=0.1):
    b = cl.standard_complex_normal(rng, (n, n))
    return b @ b.conj().T + floor * np.eye(n)


def random_vector(rng, n, scale=1.0):
    return scale * cl.standard_complex_normal(rng, n)


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
