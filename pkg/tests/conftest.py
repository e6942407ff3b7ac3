import pytest

from modelfuzz.harness import Endpoint, TimeoutPolicy
from modelfuzz.testbed import Testbed

# criterion number -> (passed, detail), filled by tests/test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def fast_policy():
    return TimeoutPolicy(connect_s=0.5, read_s=0.05, probe_retries=2, probe_backoff_s=0.05)


@pytest.fixture(scope="session")
def echo_testbed():
    with Testbed("echo") as tb:
        yield tb


@pytest.fixture
def echo_endpoint(echo_testbed):
    return Endpoint.parse(echo_testbed.endpoint)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
