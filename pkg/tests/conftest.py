import time

import pytest

from charged_polymer.lattice_walk import first_return_times

ACCEPTANCE_RESULTS: dict[int, tuple[str, str]] = {}

# shared by the lattice-constant and return-tail acceptance checks
BIG_MC = {"d": 3, "horizon": 10_000, "samples": 1_000_000, "seed": 20240611}


def pytest_addoption(parser):
    parser.addoption("--regen-golden", action="store_true", default=False,
                     help="rewrite committed golden files instead of comparing against them")


@pytest.fixture(scope="session")
def regen_golden(request):
    return request.config.getoption("--regen-golden")


@pytest.fixture(scope="session")
def big_return_times():
    t0 = time.perf_counter()
    times = first_return_times(BIG_MC["d"], BIG_MC["horizon"], BIG_MC["samples"], BIG_MC["seed"], workers=1)
    return times, time.perf_counter() - t0


@pytest.fixture
def acceptance(request):
    """Record the outcome of one acceptance criterion for the terminal summary."""
    number = request.node.get_closest_marker("criterion").args[0]
    state = {"detail": ""}
    yield state
    rep = getattr(request.node, "rep_call", None)
    outcome = "PASS" if rep is not None and rep.passed else "FAIL"
    ACCEPTANCE_RESULTS[number] = (outcome, state["detail"])


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        outcome, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number:2d}: {outcome}  {detail}")
