import sys
import numpy as np
import pytest
from hypothesis import settings

from missnet.scenario import load_scenario

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture(scope="session")
def generic():
    return load_scenario("generic")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not (mod.RESULTS or mod.INFO):
        return
    terminalreporter.section("acceptance criteria")
    for _, _, line in sorted(mod.RESULTS):
        terminalreporter.write_line(line)
    for line in mod.INFO:
        terminalreporter.write_line(line)
