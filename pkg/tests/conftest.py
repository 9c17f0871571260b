import re
from pathlib import Path

import pytest
from hypothesis import settings

from psys.scenario import bundled_dir

settings.register_profile("psys", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("psys")

CRITERION = re.compile(r"test_acceptance\.py::test_criterion_(\d+)")


@pytest.fixture
def scenario_path():
    def get(name: str) -> Path:
        return bundled_dir() / f"{name}.json"

    return get


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion."""
    results = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            m = CRITERION.search(getattr(rep, "nodeid", ""))
            if m and rep.when in ("setup", "call"):
                n = int(m.group(1))
                ok = outcome == "passed"
                results[n] = results.get(n, True) and ok
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(f"criterion {n}: {'PASS' if results[n] else 'FAIL'}")
