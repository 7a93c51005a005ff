import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_record():
    def record(line: str) -> None:
        ACCEPTANCE_LINES.append(line)
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: (len(l.split(":")[0]), l)):
            terminalreporter.write_line(line)
