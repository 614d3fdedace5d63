import os

import numpy as np
import pytest

from rpinn.mesh import RectDomain


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def unit_square():
    return RectDomain((0.0, 0.0), (1.0, 1.0))


def pytest_collection_modifyitems(config, items):
    if os.environ.get("RPINN_EXTENDED") == "1":
        return
    skip = pytest.mark.skip(reason="extended reproduction; set RPINN_EXTENDED=1 to run")
    for item in items:
        if "extended" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion and fail the test on FAIL."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])

    def record(number, title, ok, detail=""):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
        lines.append(line)
        print(line)
        assert ok, line

    return record


_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
