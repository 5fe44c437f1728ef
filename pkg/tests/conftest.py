import sys

import numpy as np
import pytest

from qdistill.environments import make_env
from qdistill.quantum import LinkParameters


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def link10():
    return LinkParameters(10.0, 0.9)


@pytest.fixture(params=["wn2m2", "bn2m2", "wn2m3"])
def any_env(request, link10):
    return make_env(request.param, link10)


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    module = next((m for name, m in sys.modules.items() if name.endswith("test_acceptance")), None)
    lines = getattr(module, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
