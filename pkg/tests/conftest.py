"""Shared test configuration and the acceptance-criterion reporter."""

import numpy as np
import pytest

_criteria = []


def record_criterion(number, description, passed, detail=""):
    """Register one acceptance-criterion outcome for the final summary."""
    _criteria.append((number, description, bool(passed), detail))


@pytest.fixture
def criterion():
    return record_criterion


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number, description, passed, detail in sorted(_criteria):
        status = "PASS" if passed else "FAIL"
        line = f"criterion {number:>2}: {status}  {description}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
