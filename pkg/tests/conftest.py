import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from robustss.instances import build_instance, r1_specs  # noqa: E402
from robustss.market import Market, MarketGrid  # noqa: E402
from robustss.measures import build_martingale_system  # noqa: E402


@pytest.fixture
def binomial():
    return Market(MarketGrid(1, 1.0, ((0.5, 2.0),)))


@pytest.fixture
def binomial_system(binomial):
    return build_martingale_system(binomial)


@pytest.fixture
def r1():
    ms, am = r1_specs()
    return build_instance(ms, am, "log")


@pytest.fixture
def r1_files(tmp_path):
    ms, am = r1_specs()
    mf, af = tmp_path / "r1_market.json", tmp_path / "r1_ambiguity.json"
    mf.write_text(json.dumps(ms))
    af.write_text(json.dumps(am))
    return mf, af


_ACCEPTANCE_KEY = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = {}


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line per acceptance criterion for the terminal summary."""
    lines = request.config.stash[_ACCEPTANCE_KEY]

    def record(number, ok, detail):
        lines[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(lines[number])
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
