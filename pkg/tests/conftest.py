import pytest

from budsim.config import bundled_config, load_config


@pytest.fixture(scope="session")
def scenario():
    cache = {}

    def get(name):
        if name not in cache:
            cache[name] = load_config(bundled_config(name))
        return cache[name]

    return get


_LINES = []


@pytest.fixture
def acceptance(capsys):
    """Print and remember one pass/fail line per acceptance criterion."""

    def report(label, ok, detail):
        line = f"ACCEPTANCE {label}: {'PASS' if ok else 'FAIL'} | {detail}"
        _LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
