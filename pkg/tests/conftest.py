import pytest

GATE_LINES: list[str] = []


@pytest.fixture
def gate():
    """Record one PASS/FAIL line per acceptance criterion."""
    def record(label: str, ok: bool, detail: str) -> bool:
        GATE_LINES.append(f"{'PASS' if ok else 'FAIL'}  {label}: {detail}")
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if GATE_LINES:
        terminalreporter.section("acceptance")
        for line in GATE_LINES:
            terminalreporter.write_line(line)
