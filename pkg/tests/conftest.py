import numpy as np
import pytest

ACCEPTANCE_LINES: list[str] = []


def all_bits(k: int) -> np.ndarray:
    """Every binary vector of length ``k`` as rows, in lexicographic order."""
    return ((np.arange(2**k)[:, None] >> np.arange(k)[::-1]) & 1).astype(np.int8)


@pytest.fixture
def rng():
    return np.random.default_rng(20240617)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
