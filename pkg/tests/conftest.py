from dataclasses import replace
from pathlib import Path

import pytest

from lpvmpc.config import load_scenario
from lpvmpc.sim import run_scenario

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


@pytest.fixture(scope="session")
def scenarios_dir():
    return SCENARIOS


@pytest.fixture(scope="session")
def oval_run(tmp_path_factory):
    """The 60 s, 70 m/s oval run, simulated once per session."""
    cfg = load_scenario(SCENARIOS / "oval70.toml")
    cfg = replace(cfg, output_dir=tmp_path_factory.mktemp("oval70"))
    return cfg, run_scenario(cfg)


@pytest.fixture(scope="session")
def ramp_run(tmp_path_factory):
    cfg = load_scenario(SCENARIOS / "ramp.toml")
    cfg = replace(cfg, output_dir=tmp_path_factory.mktemp("ramp"))
    return cfg, run_scenario(cfg)


_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


@pytest.fixture(scope="session")
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion."""
    lines = request.config.stash[_ACCEPTANCE_KEY]

    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
