import pytest

# criterion number -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}
N_CRITERIA = 9


@pytest.fixture
def record():
    def _record(criterion: int, passed: bool, detail: str) -> bool:
        ACCEPTANCE[criterion] = (bool(passed), detail)
        return bool(passed)
    return _record


def pytest_terminal_summary(terminalreporter):
    ran = any("test_acceptance" in r.nodeid for reps in terminalreporter.stats.values()
              for r in reps if hasattr(r, "nodeid"))
    if not ran:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        passed, detail = ACCEPTANCE.get(n, (False, "no result recorded (test errored or was deselected)"))
        terminalreporter.write_line(f"criterion {n}: {'PASS' if passed else 'FAIL'} - {detail}")
