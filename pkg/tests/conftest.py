"""Collects acceptance outcomes and prints them as one line each after the run."""

import pytest

_RESULTS: list[tuple[str, bool, str]] = []


class Recorder:
    def __call__(self, criterion: str, ok: bool, detail: str = "") -> bool:
        _RESULTS.append((criterion, bool(ok), detail))
        print(f"{criterion}: {'PASS' if ok else 'FAIL'} {detail}")
        return bool(ok)

    def skip(self, criterion: str, reason: str) -> None:
        _RESULTS.append((criterion, None, reason))
        pytest.skip(f"{criterion}: {reason}")


@pytest.fixture(scope="session")
def record() -> Recorder:
    return Recorder()


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, ok, detail in _RESULTS:
        status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
        terminalreporter.write_line(f"[{status}] {criterion}  {detail}".rstrip())
