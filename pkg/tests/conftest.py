import pytest

# (criterion id, title, passed, detail) rows filled in by test_acceptance
ACCEPTANCE_LOG: list[tuple[str, str, bool, str]] = []


@pytest.fixture
def record():
    def _record(ac: str, title: str, passed: bool, detail: str = "") -> bool:
        ACCEPTANCE_LOG.append((ac, title, bool(passed), detail))
        print(f"{ac} {'PASS' if passed else 'FAIL'} {title}: {detail}", flush=True)
        return passed
    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LOG:
        return
    terminalreporter.section("acceptance criteria")
    for ac, title, passed, detail in sorted(ACCEPTANCE_LOG, key=lambda r: int(r[0][2:])):
        terminalreporter.write_line(f"{ac} {'PASS' if passed else 'FAIL'} {title}: {detail}")
