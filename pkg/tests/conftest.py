import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(autouse=True)
def _isolated_cache(tmp_path_factory, monkeypatch):
    # keep reference caches out of the user's home directory
    monkeypatch.setenv("STATSOL_CACHE_DIR", str(tmp_path_factory.getbasetemp() / "cache"))
    yield


VERDICTS: list[str] = []


@pytest.fixture
def verdict(capsys):
    """Record and print one PASS/FAIL line, then assert it."""

    def _verdict(number: int, title: str, ok: bool, detail: str):
        line = f"CRITERION {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        VERDICTS.append(line)
        with capsys.disabled():
            print("\n" + line)
        assert ok, line

    return _verdict


@pytest.fixture
def info(capsys):
    def _info(number: int, detail: str):
        line = f"CRITERION {number:>2} INFO  {detail}"
        VERDICTS.append(line)
        with capsys.disabled():
            print("\n" + line)

    return _info


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
