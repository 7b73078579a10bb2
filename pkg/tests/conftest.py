import sys
import functools

import pytest

from flowprob.scenarios import load_scenario


@functools.lru_cache(maxsize=None)
def cached_scenario(name):
    return load_scenario(name)


@pytest.fixture
def example1():
    return cached_scenario("example1")


@pytest.fixture
def example2():
    return cached_scenario("example2")


@pytest.fixture
def gaslib():
    return cached_scenario("gaslib11")


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
