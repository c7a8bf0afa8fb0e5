from __future__ import annotations

import pytest

from mscs.gaussfield import FieldModel
from mscs.ordersearch import build_subset_costs, dp_search


@pytest.fixture(scope="session")
def model() -> FieldModel:
    return FieldModel()


@pytest.fixture(scope="session")
def table4(model):
    return build_subset_costs(4, model)


@pytest.fixture(scope="session")
def dp4(model, table4):
    return dp_search(4, model, table=table4)


@pytest.fixture(scope="session")
def dp4_worst(model, table4):
    return dp_search(4, model, worst=True, table=table4)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "VERDICTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
