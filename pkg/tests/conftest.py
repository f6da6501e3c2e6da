import pytest

from ndthermo.benchmark import replicate_split
from ndthermo.synth import NoiseModel, ScenarioConfig


@pytest.fixture(scope="session")
def scenario():
    return ScenarioConfig()


@pytest.fixture(scope="session")
def noiseless():
    return ScenarioConfig(noise=NoiseModel(sigma_per_sweep=0.0))


@pytest.fixture(scope="session")
def data_split(scenario):
    """(replicate 1, replicate 2) of the default scenario at seed 0."""
    return replicate_split(scenario, 0)


# -- acceptance reporting ----------------------------------------------------------

ACCEPTANCE_LINES = []


class _Criterion:
    def __init__(self):
        self.checks = []

    def check(self, name, ok, detail=""):
        self.checks.append((name, bool(ok), detail))
        return ok

    @property
    def passed(self):
        return bool(self.checks) and all(ok for _, ok, _ in self.checks)

    def summary(self):
        bad = [f"{n} ({d})" if d else n for n, ok, d in self.checks if not ok]
        good = [f"{n} ({d})" if d else n for n, ok, d in self.checks if ok]
        return "; ".join(bad) if bad else "; ".join(good)


@pytest.fixture
def criterion(request):
    """Collects named checks for one acceptance criterion and logs a single
    PASS/FAIL line, also when the body raises."""
    c = _Criterion()
    marker = request.node.get_closest_marker("criterion")
    number, title = marker.args
    yield c
    rep = getattr(request.node, "rep_call", None)
    crashed = rep is not None and rep.failed and c.passed
    status = "PASS" if c.passed and not crashed else "FAIL"
    line = f"criterion {number} [{status}] {title}: {c.summary() or 'no checks ran'}"
    ACCEPTANCE_LINES.append(line)
    print("\n" + line)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
