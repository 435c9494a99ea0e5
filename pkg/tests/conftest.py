import pytest

_RESULTS: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def report():
    """Record a pass/fail line for an acceptance criterion and return ``ok``."""

    def _report(name: str, ok: bool, detail: str) -> bool:
        ok = bool(ok)
        _RESULTS[name] = (ok, detail)
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_RESULTS, key=lambda s: int(s.split()[1].rstrip("abc"))):
        ok, detail = _RESULTS[name]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
