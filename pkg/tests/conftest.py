import os
import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

GOLDEN = Path(__file__).parent / "golden"
sys.path.insert(0, str(GOLDEN))

_acceptance: dict[str, tuple[str, str]] = {}


@pytest.fixture
def measured(request):
    """Record ``key=value`` facts shown next to the criterion in the summary."""

    def record(**facts):
        for k, v in facts.items():
            request.node.user_properties.append((k, f"{v:.4g}" if isinstance(v, float) else str(v)))

    return record


@pytest.fixture(scope="session")
def golden_dir() -> Path:
    return GOLDEN


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call" or report.outcome != "passed":
        prev = _acceptance.get(name)
        if prev is None or prev[0] == "PASS":
            status = "PASS" if report.outcome == "passed" else ("SKIP" if report.outcome == "skipped" else "FAIL")
            facts = ", ".join(f"{k}={v}" for k, v in report.user_properties)
            _acceptance[name] = (status, facts)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_acceptance, key=lambda n: int(n.split("_")[2]) if n.split("_")[2].isdigit() else 99):
        status, facts = _acceptance[name]
        terminalreporter.write_line(f"{status}  {name}" + (f"  [{facts}]" if facts else ""))
