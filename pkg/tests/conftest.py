import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from _cases import robin_laplace_spec  # noqa: E402
from moserlab.solver import solve  # noqa: E402

_ACCEPTANCE = {}


@pytest.fixture(scope="session")
def robin_solution():
    """The p = 2 manufactured Robin problem solved on a 32 x 32 mesh."""
    spec = robin_laplace_spec(32)
    return spec, solve(spec)


def pytest_runtest_logreport(report):
    name = report.nodeid.rsplit("::", 1)[-1]
    if "test_acceptance.py" not in report.nodeid or not name.startswith("test_A"):
        return
    crit = name[len("test_"):].split("_", 1)[0]
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        if hasattr(report, "wasxfail"):
            outcome = "xfail"
        else:
            outcome = report.outcome
        _ACCEPTANCE.setdefault(crit, []).append((name, outcome))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(_ACCEPTANCE, key=lambda c: int(c[1:])):
        results = _ACCEPTANCE[crit]
        bad = [n for n, o in results if o != "passed"]
        if not bad:
            terminalreporter.write_line(f"{crit}: PASS ({len(results)} checks)")
        else:
            known = all(o == "xfail" for n, o in results if o != "passed")
            tag = "known failure, documented" if known else "see failures above"
            terminalreporter.write_line(f"{crit}: FAIL ({len(bad)} of {len(results)} checks: {', '.join(bad)}; {tag})")
