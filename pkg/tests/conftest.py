import pytest


def pytest_configure(config):
    config._acceptance = {}


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion."""

    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}"
        request.config._acceptance[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "_acceptance", {})
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
