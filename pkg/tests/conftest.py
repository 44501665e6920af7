import re

import pytest

_VERDICTS = {}


@pytest.fixture
def verdict():
    """Record one pass/fail line for an acceptance criterion."""
    def record(name, ok, detail):
        line = f"{name} {'PASS' if ok else 'FAIL'}  {detail}"
        _VERDICTS[name] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for name in sorted(_VERDICTS, key=lambda s: int(re.sub(r"\D", "", s) or 0)):
        terminalreporter.write_line(_VERDICTS[name])
