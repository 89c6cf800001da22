import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")

ACCEPTANCE = []


@pytest.fixture
def verdict():
    """Record one acceptance line: verdict(number, name, passed, detail)."""
    def record(number, name, passed, detail=""):
        ACCEPTANCE.append((number, name, bool(passed), detail))
        return bool(passed)
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, passed, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} [{number:2d}] {name}: {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
