import numpy as np
import pytest

from nvcavity.core import mhz


@pytest.fixture
def omega_c():
    return mhz(2700.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


VERDICTS = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
