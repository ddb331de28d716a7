"""Shared fixtures and the per-criterion summary printed at the end of a run."""

from __future__ import annotations

import pytest

from clmdp.harness import ExperimentConfig, run_experiment

DOMAIN_NAMES = ("salp", "taxi", "warehouse")

_outcomes: dict[int, list[tuple[str, str]]] = {}


@pytest.fixture(scope="session")
def bench_reports():
    """Full seven-technique reports on every domain's fixture seeds, 100 trials each."""
    cache: dict[str, dict] = {}

    def get(domain: str) -> dict:
        if domain not in cache:
            cache[domain] = run_experiment(ExperimentConfig(domain=domain))
        return cache[domain]

    return get


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number exercised by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _outcomes.setdefault(int(marker.args[0]), []).append((item.name, report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_outcomes):
        results = _outcomes[number]
        failed = [name for name, outcome in results if outcome != "passed"]
        status = "FAIL" if failed else "PASS"
        detail = f" ({', '.join(failed)})" if failed else ""
        terminalreporter.write_line(f"criterion {number:2d}: {status} [{len(results)} test(s)]{detail}")
