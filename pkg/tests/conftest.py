import numpy as np
import pytest

from clouds import make_bar_cloud

# Criterion results recorded by the acceptance tests, printed as one line each
# at the end of the run. Insertion order is presentation order.
_ACCEPTANCE: dict = {}


@pytest.fixture
def criterion():
    """Recorder for acceptance checks: call before asserting, so a failing
    criterion still prints its line."""
    def record(name: str, passed: bool, detail: str = ""):
        _ACCEPTANCE[name] = (bool(passed), detail)
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, (ok, detail) in _ACCEPTANCE.items():
        tag = "PASS" if ok else "FAIL"
        line = f"[{tag}] {name}"
        if detail:
            line += f": {detail}"
        terminalreporter.write_line(line, green=ok, red=not ok)


@pytest.fixture(scope="session")
def bar_cloud():
    return make_bar_cloud()


@pytest.fixture(scope="session")
def bar_graph(bar_cloud):
    import morphkit as mk
    return mk.build_control_graph(bar_cloud.center, node_count=48)


@pytest.fixture
def rng():
    return np.random.default_rng(7)
