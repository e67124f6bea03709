import numpy as np
import pytest
from hypothesis import settings

from bimodal_nav.benchmark import VARIANTS
from bimodal_nav.config import builtin_scenarios, load_config
from bimodal_nav.simulator import timed_run

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def fixture_configs():
    return {p.stem: load_config(p) for p in builtin_scenarios()}


@pytest.fixture(scope="session")
def fixture_runs(fixture_configs):
    """Every built-in fixture under both variants, run once per session.

    Maps ``(name, variant)`` to ``(log, metrics, wall_seconds)``.
    """
    return {(name, v): timed_run(cfg.with_variant(v))
            for name, cfg in fixture_configs.items() for v in VARIANTS}


@pytest.fixture(scope="session")
def acceptance_record():
    def record(number: int, ok: bool, detail: str):
        ACCEPTANCE_LINES.append((number, ok, detail))
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(ACCEPTANCE_LINES, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
