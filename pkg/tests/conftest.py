import re

import numpy as np
import pytest

from threshold_rep.protocol import builtin_coin_protocol, builtin_hedging_protocol


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def hedging():
    return builtin_hedging_protocol()


@pytest.fixture(scope="session")
def coin():
    return builtin_coin_protocol()


_CRITERION = re.compile(r"test_criterion_(\d+)_(\w+)")


def pytest_terminal_summary(terminalreporter):
    rows = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            if getattr(rep, "when", "call") not in ("call", "setup"):
                continue
            m = _CRITERION.search(rep.nodeid)
            if m is None or "test_acceptance" not in rep.nodeid:
                continue
            key = int(m.group(1))
            status = "PASS" if outcome == "passed" else "FAIL"
            prev = rows.get(key)
            if prev is None or status == "FAIL":
                rows[key] = (status, m.group(2))
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(rows):
        status, name = rows[key]
        terminalreporter.write_line(f"criterion {key} [{name}]: {status}")
