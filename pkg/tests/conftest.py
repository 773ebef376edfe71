import pytest

# criterion id -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE = {}


def record(cid: str, passed: bool, detail: str):
    ACCEPTANCE[cid] = (bool(passed), detail)
    print(f"[{cid}] {'PASS' if passed else 'FAIL'}: {detail}")


@pytest.fixture
def acceptance():
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE, key=lambda c: (int(c.split()[0].rstrip("abc")), c)):
        passed, detail = ACCEPTANCE[cid]
        terminalreporter.write_line(f"{cid:<4} {'PASS' if passed else 'FAIL'}  {detail}")
