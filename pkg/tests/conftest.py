import pytest

_LINES = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def criterion_log(request):
    """Collects one PASS/FAIL line per acceptance criterion."""
    lines = request.config.stash.setdefault(_LINES, [])

    def record(cid, title, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'}  C{cid:<2} {title}: {detail}"
        lines.append((cid, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(lines):
        terminalreporter.write_line(line)
