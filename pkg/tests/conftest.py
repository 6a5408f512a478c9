import json
import pathlib
import sys

import numpy as np
import pytest

HERE = pathlib.Path(__file__).resolve().parent
sys.path.insert(0, str(HERE))


def pytest_addoption(parser):
    parser.addoption("--skip-slow", action="store_true",
                     help="skip tests marked slow")


def pytest_collection_modifyitems(config, items):
    if not config.getoption("--skip-slow"):
        return
    skip = pytest.mark.skip(reason="--skip-slow given")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(scope="session")
def frozen():
    with open(HERE / "data" / "oracles.json") as fh:
        return json.load(fh)


def as_box(problem):
    """Bounds of a frozen problem; JSON null marks an infinite bound."""
    lo = np.array([-np.inf if x is None else x for x in problem["lower"]])
    hi = np.array([np.inf if x is None else x for x in problem["upper"]])
    return lo, hi


_ACCEPTANCE = {}


@pytest.fixture(scope="session")
def acceptance_report():
    """Record ``(criterion, passed, detail)``; lines print in the summary."""
    def record(number, title, passed, detail):
        line = f"criterion {number} {title}: {'PASS' if passed else 'FAIL'}"
        if detail:
            line += f" ({detail})"
        _ACCEPTANCE[number] = line
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[number])
