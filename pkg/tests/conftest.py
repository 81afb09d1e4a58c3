import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record a one-line acceptance verdict; fail on FAIL, skip when ``ok`` is None."""

    def record(number: int, title: str, ok: bool | None, detail: str):
        tag = "SKIP" if ok is None else "PASS" if ok else "FAIL"
        line = f"criterion {number} [{tag}] {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        if ok is None:
            pytest.skip(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
