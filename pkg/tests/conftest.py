import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

import _support  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if _support.ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _support.ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
