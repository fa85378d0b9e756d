import pytest


def pytest_configure(config):
    config.acceptance_lines = {}


@pytest.fixture
def criterion(request):
    """record(key, ok, detail) stores one pass/fail line for the summary."""
    def record(key, ok, detail):
        line = f"[{key}] {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.acceptance_lines[key] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.acceptance_lines
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(lines, key=lambda k: (int(k.split()[-1][0]), k)):
        terminalreporter.write_line(lines[key])
