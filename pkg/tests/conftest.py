import pytest

# one "criterion N: PASS|FAIL ..." line per acceptance criterion, filled by test_acceptance
ACCEPTANCE_LINES = {}


@pytest.fixture
def acceptance():
    def record(number, name, passed, detail):
        line = f"criterion {number:>2} [{name}]: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
