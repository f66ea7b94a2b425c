import numpy as np
import pytest

from rootbarrier.barrier import INF
from rootbarrier.diffusion import DiffusionSpec
from rootbarrier.measure import dirac, discrete, gaussian, uniform
from rootbarrier.solver import (
    ConvexOrderError, EmbeddingProblem, GridError, PSORConvergenceError, SchemeViolationError, SolveGrid,
    ValueSurface, contact_times, extract_barrier, residual_report, solve, solve_surface,
)

DT = 2.0 / 600


def test_normal_target_constant_barrier(normal_solved):
    r, _ = normal_solved
    xs = np.linspace(-2, 2, 201)
    assert np.all(np.abs(r(xs) - 1.0) <= 0.05)


def test_twopoint_target_exit_barrier(twopoint_solved):
    r, _ = twopoint_solved
    inside = np.linspace(-0.99, 0.99, 199)
    assert np.all(r(inside) == INF)
    # -1 and 1 fall inside straddling cells; one cell out the barrier is zero
    dx = r.grid[1] - r.grid[0]
    outside = np.array([-1.5, -1.1, -1 - 2 * dx, 1 + 2 * dx, 1.1, 1.5])
    assert np.all(r(outside) <= 2 * DT)


def test_uniform_target_symmetric(uniform_solved):
    r, _ = uniform_solved
    xs = np.linspace(-1.4, 1.4, 281)
    assert np.all(np.abs(r(xs) - r(-xs)) <= 2 * DT + 1e-12)
    assert r(0.0) > 0.3
    assert np.all(r(np.array([-1.3, 1.3])) == 0.0)


@pytest.mark.parametrize("name", ["normal_solved", "uniform_solved", "twopoint_solved"])
def test_surface_invariants(name, request):
    _, surf = request.getfixturevalue(name)
    rep = residual_report(surf)
    assert rep.max_residual < 1e-6
    assert rep.n_steps == 600
    # initial row is the initial potential; all three start from delta_0
    np.testing.assert_allclose(surf.u[0, 1:-1], dirac(0.0).potential(surf.x_grid[1:-1]), atol=1e-12)
    assert np.all(surf.gap >= -1e-12)
    # u is non-increasing in t (concave potential under the heat flow)
    assert np.all(np.diff(surf.u, axis=0) <= 1e-12)


def test_twopoint_kinks_reported_separately(twopoint_solved):
    rep = residual_report(twopoint_solved[1])
    assert any(abs(x + 1) < 0.02 for x in rep.kink_nodes)
    assert any(abs(x - 1) < 0.02 for x in rep.kink_nodes)


def test_crank_nicolson_and_geometric():
    r, surf = solve(EmbeddingProblem(dirac(0.0), gaussian()), SolveGrid(n_x=300, n_t=300, theta=0.5))
    assert abs(r(0.0) - 1.0) <= 0.05 and residual_report(surf).max_residual < 1e-6
    gbm = EmbeddingProblem(dirac(1.0), uniform(0.5, 1.5), DiffusionSpec.geometric())
    r, surf = solve(gbm, SolveGrid(n_x=300, n_t=300))
    assert surf.x_grid[0] >= 0.0
    assert 0 < r(1.0) < INF and r(0.3) == 0.0
    assert residual_report(surf).max_residual < 1e-6


# --- extraction on manufactured surfaces --------------------------------------------


def manufactured(gap_rows, charged=True):
    x = np.linspace(-1, 1, 5)
    t = np.linspace(0, 1, len(gap_rows))
    psi = -np.abs(x)
    u = np.array(gap_rows, dtype=float) + psi
    ch = np.full(x.size, charged)
    return ValueSurface(x, t, u, psi, ch, np.zeros(x.size, bool), np.ones_like(u))


def test_extract_immediate_contact():
    r = extract_barrier(manufactured([np.zeros(5), np.zeros(5)]))
    assert np.all(r.cells == 0.0)


def test_extract_constant_gap_is_infinite():
    g = np.array([0.0, 0.1, 0.1, 0.1, 0.0])
    r = extract_barrier(manufactured([g, g, g]))
    assert r(0.0) == INF and r(-0.5) == INF
    assert r(-1.0) == 0.0


def test_extract_first_contact_time():
    rows = [[0, 0.2, 0.2, 0.2, 0], [0, 0.1, 0, 0.1, 0], [0, 0, 0, 0, 0]]
    first = contact_times(manufactured(rows))
    np.testing.assert_array_equal(first, [0, 2, 1, 2, 0])


def test_uncharged_node_never_contacts():
    rows = [[0, 0.2, 0.2, 0.2, 0], [0, 1e-12, 1e-12, 1e-12, 0]]
    assert np.all(contact_times(manufactured(rows, charged=False))[1:4] == -1)


def test_leaving_contact_is_a_scheme_violation():
    rows = [[0, 0.2, 0.2, 0.2, 0], [0, 0, 0, 0, 0], [0, 0.1, 0, 0, 0]]
    with pytest.raises(SchemeViolationError):
        contact_times(manufactured(rows))


# --- errors ---------------------------------------------------------------------------------


def test_convex_order_error():
    with pytest.raises(ConvexOrderError) as exc:
        solve(EmbeddingProblem(gaussian(), dirac(0.0)))
    assert exc.value.witness == pytest.approx(0.0, abs=0.01)


def test_grid_error_when_range_too_narrow():
    with pytest.raises(GridError):
        solve(EmbeddingProblem(dirac(0.0), gaussian()), SolveGrid(n_x=100, n_t=50, x_min=-0.5, x_max=0.5))
    with pytest.raises(GridError):
        SolveGrid(theta=0.3)
    with pytest.raises(GridError):
        SolveGrid(n_x=4)


def test_psor_error():
    with pytest.raises(PSORConvergenceError) as exc:
        solve(EmbeddingProblem(dirac(0.0), gaussian()), SolveGrid(n_x=200, n_t=100, psor_max_iters=1, psor_tol=1e-16))
    assert exc.value.step == 1


def test_domain_check():
    with pytest.raises(ValueError):
        EmbeddingProblem(dirac(1.0), uniform(-0.5, 2.5), DiffusionSpec.geometric())


def test_surface_csv(tmp_path):
    surf = solve_surface(EmbeddingProblem(dirac(0.0), discrete([-1, 1], [0.5, 0.5])), SolveGrid(n_x=16, n_t=16))
    surf.write_csv(tmp_path / "s.csv")
    data = np.loadtxt(tmp_path / "s.csv", delimiter=",", skiprows=1)
    assert data.shape == (17 * 16, 3)
    np.testing.assert_array_equal(data[:, 2].reshape(17, 16), surf.u)
