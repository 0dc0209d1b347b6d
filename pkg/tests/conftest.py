import numpy as np
import pytest

# (criterion id, passed, detail) rows filled by the acceptance tests
ACCEPTANCE = []


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid, passed, detail in sorted(ACCEPTANCE, key=lambda r: (len(r[0]), r[0])):
        terminalreporter.write_line(f"criterion {cid}: {'PASS' if passed else 'FAIL'} - {detail}")
