import numpy as np
import pytest

_ACCEPTANCE_RESULTS = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    num = marker.kwargs.get("num", marker.args[0] if marker.args else "?")
    title = marker.kwargs.get("title",
                              marker.args[1] if len(marker.args) > 1 else item.name)
    if rep.when == "call" or (rep.when == "setup" and rep.outcome == "skipped"):
        _ACCEPTANCE_RESULTS[num] = (title, rep.outcome)


_ALL_CRITERIA = {
    1: "derivative oracle gate",
    2: "quadrature equivalence (verbatim)",
    "2b": "quadrature equivalence (attainable contract)",
    3: "Table-1 bias ordering [slow suite]",
    4: "MCMC-vs-XLA agreement",
    5: "spectral log-determinant identity",
    6: "spatial correlation vs long simulation",
    7: "PIT calibration",
    8: "Chicago reproduction [slow suite, needs data/chicago/]",
}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    words = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIPPED"}
    for num, default_title in _ALL_CRITERIA.items():
        if num in _ACCEPTANCE_RESULTS:
            title, outcome = _ACCEPTANCE_RESULTS[num]
            terminalreporter.write_line(
                f"criterion {num}: {words.get(outcome, outcome.upper()):<8} {title}")
        else:
            terminalreporter.write_line(
                f"criterion {num}: NOT RUN  {default_title}")


@pytest.fixture(scope="session")
def torus3():
    from secar import CarStructure, build_torus_lattice
    return CarStructure.from_graph(build_torus_lattice(3, 3))


@pytest.fixture(scope="session")
def small_problem():
    """5x5 torus, T=40, simulated at moderate parameters; shared read-only."""
    from helpers import torus_problem
    from secar import ModelParams
    truth = ModelParams(eta=0.3, zeta=0.15, tau2=0.5, beta=np.array([0.2]))
    car, design, panel, latent = torus_problem(5, 5, 40, truth, seed=7)
    return {"car": car, "design": design, "panel": panel, "latent": latent,
            "truth": truth}
