import sys

import pytest

from subriemann import gallery


@pytest.fixture(scope="session")
def entries():
    return {name: gallery.get(name) for name in gallery.names()}


@pytest.fixture(scope="session")
def frames(entries):
    return {name: e.frame() for name, e in entries.items()}


@pytest.fixture(scope="session")
def heis(entries, frames):
    return entries["heisenberg"], frames["heisenberg"]


@pytest.fixture(scope="session")
def sqrt_entry(entries, frames):
    return entries["paper:sqrt"], frames["paper:sqrt"]


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance")
        for line in lines:
            terminalreporter.write_line(line)
