import pytest

from rootbarrier.measure import dirac, discrete, gaussian, uniform
from rootbarrier.solver import EmbeddingProblem, SolveGrid, solve


@pytest.fixture(scope="session")
def normal_problem():
    return EmbeddingProblem(dirac(0.0), gaussian(0.0, 1.0))


@pytest.fixture(scope="session")
def normal_solved(normal_problem):
    return solve(normal_problem, SolveGrid(n_x=600, n_t=600, t_cap=2.0))


@pytest.fixture(scope="session")
def uniform_problem():
    return EmbeddingProblem(dirac(0.0), uniform(-1.0, 1.0))


@pytest.fixture(scope="session")
def uniform_solved(uniform_problem):
    return solve(uniform_problem, SolveGrid(n_x=600, n_t=600, t_cap=2.0))


@pytest.fixture(scope="session")
def twopoint_problem():
    return EmbeddingProblem(dirac(0.0), discrete([-1.0, 1.0], [0.5, 0.5]))


@pytest.fixture(scope="session")
def twopoint_solved(twopoint_problem):
    return solve(twopoint_problem, SolveGrid(n_x=600, n_t=600, t_cap=2.0))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
