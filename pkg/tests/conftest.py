import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record one summary line per acceptance criterion."""

    def record(number: int, title: str, status: str, detail: str, elapsed: float, limit: float):
        ACCEPTANCE_LINES.append(f"[{number:>2}] {status:<4} {title}: {detail} ({elapsed:.1f}s, limit {limit:g}s)")
        print(ACCEPTANCE_LINES[-1])

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
