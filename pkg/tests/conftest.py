import os
from collections import OrderedDict

import numpy as np
import pytest

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


@pytest.fixture
def fixture_path():
    return lambda name: os.path.join(FIXTURES, name)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion, aggregated over its tests."""
    criteria = OrderedDict()
    for key in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(key, []):
            props = dict(getattr(rep, "user_properties", []))
            if "criterion" not in props or rep.when not in ("call", "setup"):
                continue
            if rep.when == "setup" and rep.passed:
                continue
            entry = criteria.setdefault(props["criterion"], {"ok": True, "details": []})
            entry["ok"] &= rep.passed
            if props.get("detail"):
                entry["details"].append(props["detail"])
    if not criteria:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(criteria, key=int):
        entry = criteria[crit]
        status = "PASS" if entry["ok"] else "FAIL"
        terminalreporter.write_line(f"criterion {crit}: {status}  {'; '.join(entry['details'])}")
