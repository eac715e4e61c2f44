import pytest

ACCEPTANCE: dict = {}
N_CRITERIA = 10


@pytest.fixture(scope="session")
def record_criterion():
    def record(k: int, ok: bool, detail: str):
        ACCEPTANCE[k] = (bool(ok), detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in range(1, N_CRITERIA + 1):
        ok, detail = ACCEPTANCE.get(k, (False, "no result (test errored or was not selected)"))
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
