"""Session fixtures and the acceptance summary block.

The expensive objects (the full-resolution interval model and its probe
battery) are built once per session.  Acceptance tests report through
``record_acceptance``; the collected lines are echoed as a terminal
section at the end of the run so each criterion shows one pass/fail
line regardless of output capturing.
"""
import json
from pathlib import Path

import numpy as np
import pytest

from mosco_graphs import default_test_battery, neumann_model

_ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, name: str, passed: bool, detail: str) -> str:
    mark = "pass" if passed else "FAIL"
    line = f"criterion {number:02d} [{mark}] {name}: {detail}"
    _ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(_ACCEPTANCE_LINES):
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def frozen_reference() -> dict:
    with open(Path(__file__).parent / "data" / "resolvent_tau.json") as handle:
        return json.load(handle)


@pytest.fixture(scope="session")
def neumann_full():
    return neumann_model(1024, 64)


@pytest.fixture(scope="session")
def neumann_small():
    return neumann_model(256, 16)


@pytest.fixture(scope="session")
def battery_full(neumann_full, frozen_reference):
    rng = np.random.default_rng(frozen_reference["seed"])
    return default_test_battery(neumann_full, neumann_full.basis, rng)
