import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from rootbarrier.barrier import INF, Barrier
from rootbarrier.diffusion import (
    STATUS_STOPPED, DiffusionSpec, EmpiricalLaw, NoClosedFormError, density_sup_bound, read_empirical_csv,
    simulate_paths, simulate_stopped, transition_density, validate_assumptions,
)
from rootbarrier.measure import dirac, gaussian, uniform
from rootbarrier.verify import ks_distance

BM = DiffusionSpec.brownian()
GBM = DiffusionSpec.geometric()


def exit_barrier(cap=20.0):
    # zero outside (-1, 1), never stop inside
    return Barrier([-1.0, 1.0], [INF], [0.0, 0.0], cap)


# --- catalogue and assumptions ----------------------------------------------------


def test_sigma_catalogue():
    assert BM.sigma(0.3, 5.0) == 1.0
    assert GBM.sigma(0.0, 2.5) == 2.5
    aff = DiffusionSpec("affine", {"alpha": 0.5, "beta": 2.0})
    assert aff.sigma(0.0, 1.0) == 2.5
    tab = DiffusionSpec("table", {"t": [0, 1], "x": [0, 2], "values": [[1, 3], [2, 4]]})
    assert tab.sigma(0.5, 1.0) == pytest.approx(2.5)
    assert tab.sigma(5.0, -1.0) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        DiffusionSpec("levy")


def test_validate_brownian():
    rep = validate_assumptions(BM, ((0, 1), (-3, 3)))
    assert rep.passed and rep["lipschitz"].statistic == 0.0


def test_validate_geometric_lower_bound():
    rep = validate_assumptions(GBM, ((0, 1), (0.5, 2.0)))
    assert rep["nondegenerate"].statistic == pytest.approx(0.5)
    assert rep.passed


def test_validate_affine_degenerate():
    aff = DiffusionSpec("affine", {"alpha": 0.0, "beta": 1.0})
    rep = validate_assumptions(aff, ((0, 1), (-1, 1)))
    assert rep["nondegenerate"].passed is False


def test_validate_table_flagged():
    tab = DiffusionSpec("table", {"t": [0.0], "x": [0.0, 1.0], "values": [[1.0, 1.5]]})
    assert validate_assumptions(tab, ((0, 1), (0, 1)))["smooth"].passed is None


# --- transition densities -------------------------------------------------------------


def test_transition_density_values():
    assert transition_density(BM, 0, 0, 1, 0) == pytest.approx(0.398942, abs=1e-6)
    assert transition_density(GBM, 0, 1, 1, 1) == pytest.approx(0.352065, abs=1e-5)
    assert transition_density(GBM, 0, 1, 1, 1) == pytest.approx(stats.lognorm(s=1, scale=math.exp(-0.5)).pdf(1))
    with pytest.raises(NoClosedFormError):
        transition_density(DiffusionSpec("affine", {"alpha": 1, "beta": 0}), 0, 0, 1, 0)


def test_transition_density_integrates_to_one():
    val, _ = integrate.quad(lambda y: transition_density(GBM, 0.0, 1.3, 0.7, y), 0, math.inf, limit=200)
    assert val == pytest.approx(1.0, abs=1e-8)


@settings(max_examples=100, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0, 2), st.floats(0.01, 3))
def test_brownian_symmetry(x, y, s, v):
    assert transition_density(BM, s, x, s + v, y) == pytest.approx(transition_density(BM, s, y, s + v, x))


def test_density_sup_bound_examples():
    assert density_sup_bound(BM, 0, 1, -1, 1) == pytest.approx(0.398942, abs=1e-6)
    assert density_sup_bound(BM, 0, 1, 2, 3) == pytest.approx(0.398942, abs=1e-6)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.05, 3), st.floats(0.01, 2), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_sup_bound_nested_and_sharp(x, width, f1, f2, v):
    v = 0.05 + v
    y = x + width
    lo = x + f1 * width
    hi = lo + f2 * (y - lo)
    for spec in (BM, GBM):
        assert density_sup_bound(spec, 0, v, lo, hi) <= density_sup_bound(spec, 0, v, x, y) * (1 + 1e-12)
    # brute-force sup over a grid never exceeds the closed form
    g = np.linspace(x, y, 41)
    brute = max(np.max(transition_density(GBM, 0, a, v, g)) for a in g)
    assert brute <= density_sup_bound(GBM, 0, v, x, y) * (1 + 1e-9)


# --- simulation --------------------------------------------------------------------------


def test_constant_barrier_gives_normal():
    law = simulate_stopped(BM, dirac(0.0), Barrier.constant(1.0, -50, 50), dt=1e-3, n_paths=20_000, seed=1)
    assert ks_distance(law, gaussian()) < 0.015
    assert np.all(law.stop_times == 1.0) and law.unstopped_rate == 0.0


def test_ks_shifted_measure_detected():
    law = simulate_stopped(BM, dirac(0.0), Barrier.constant(1.0, -50, 50), dt=1e-3, n_paths=5_000, seed=2)
    assert ks_distance(law, gaussian(1.0, 1.0)) > 0.3


def test_halving_dt_changes_ks_little():
    r = Barrier.constant(1.0, -50, 50)
    k1 = ks_distance(simulate_stopped(BM, dirac(0.0), r, dt=2e-3, n_paths=20_000, seed=3), gaussian())
    k2 = ks_distance(simulate_stopped(BM, dirac(0.0), r, dt=1e-3, n_paths=20_000, seed=3), gaussian())
    assert abs(k1 - k2) < 0.005


def test_two_sided_exit_symmetric():
    ens = simulate_paths(BM, dirac(0.0), exit_barrier(), (), dt=1e-3, n_paths=100_000, seed=4)
    assert np.all(ens.status == STATUS_STOPPED)
    up = np.mean(ens.x_tau > 0)
    assert abs(up - 0.5) < 0.005
    assert np.all(np.abs(np.abs(ens.x_tau) - 1) < 0.01)
    # both sides are hit in every dyadic time window
    for k in range(-4, 2):
        lo, hi = 2.0**k, 2.0 ** (k + 1)
        sel = (ens.tau >= lo) & (ens.tau < hi)
        assert np.any(ens.x_tau[sel] > 0) and np.any(ens.x_tau[sel] < 0)


def test_t_eval_zero_is_initial_law():
    m = uniform(-1, 1)
    law = simulate_stopped(BM, m, Barrier.constant(1.0, -5, 5), t_eval=0.0, dt=1e-2, n_paths=5000, seed=5)
    ens = simulate_paths(BM, m, Barrier.constant(1.0, -5, 5), (0.0,), dt=1e-2, n_paths=5000, seed=5)
    np.testing.assert_array_equal(law.samples, ens.at(0.0))
    assert ks_distance(law, m) < 2.0 / math.sqrt(5000)


def test_chunked_equals_whole():
    args = (BM, uniform(-1, 1), Barrier.from_nodes(np.linspace(-2, 2, 9), [0, .2, .4, .6, .8, .6, .4, .2, 0], 1.0))
    whole = simulate_paths(*args, (0.3,), dt=1e-3, n_paths=3000, seed=9)
    parts = [simulate_paths(*args, (0.3,), dt=1e-3, n_paths=1000, seed=9, path_offset=o) for o in (0, 1000, 2000)]
    np.testing.assert_array_equal(whole.x_tau, np.concatenate([p.x_tau for p in parts]))
    np.testing.assert_array_equal(whole.samples, np.concatenate([p.samples for p in parts]))
    again = simulate_paths(*args, (0.3,), dt=1e-3, n_paths=3000, seed=9, threads=1)
    np.testing.assert_array_equal(whole.tau, again.tau)


def test_constant_barrier_equals_infinite_barrier_at_cap():
    a = simulate_stopped(BM, dirac(0.0), Barrier.constant(0.5, -30, 30), dt=1e-2, n_paths=2000, seed=6)
    inf_r = Barrier([-30.0, 30.0], [INF], [INF, INF], 0.5)
    b = simulate_stopped(BM, dirac(0.0), inf_r, t_eval=0.5, dt=1e-2, n_paths=2000, seed=6)
    np.testing.assert_array_equal(a.samples, b.samples)


def test_stopped_martingale():
    r = Barrier.from_nodes(np.linspace(-1.5, 1.5, 31), 0.5 * (1 - np.abs(np.linspace(-1, 1, 31))), 1.0)
    m = uniform(-0.5, 1.0)
    ens = simulate_paths(BM, m, r, (0.1, 0.25, 0.5), dt=1e-3, n_paths=20_000, seed=8)
    for t in (0.1, 0.25, 0.5):
        x = ens.at(t)
        assert abs(x.mean() - m.mean) < 4 * x.std() / math.sqrt(x.size)


def test_geometric_stays_positive():
    r = Barrier.constant(1.0, 0.01, 20.0)
    law = simulate_stopped(GBM, uniform(0.5, 1.5), r, dt=1e-3, n_paths=5000, seed=3)
    assert law.exit_count == 0 and np.all(law.samples > 0)


def test_finite_t_eval_above_cap_rejected():
    with pytest.raises(ValueError):
        simulate_stopped(BM, dirac(0.0), Barrier.constant(1.0, -5, 5), t_eval=2.0, n_paths=10)


def test_empirical_law_invariants_and_csv(tmp_path):
    with pytest.raises(ValueError):
        EmpiricalLaw(np.zeros(3), np.zeros(2), 0, 0.1, 3)
    with pytest.raises(ValueError):
        EmpiricalLaw(np.zeros(2), np.array([0.1, -1.0]), 0, 0.1, 2)
    law = EmpiricalLaw(np.array([0.1, -1 / 3]), np.array([1.0, 0.25]), 0, 0.1, 2)
    law.write_csv(tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text().splitlines()[0] == "path_index,x_stop,tau"
    x, t = read_empirical_csv(tmp_path / "e.csv")
    np.testing.assert_array_equal(x, law.samples)
    np.testing.assert_array_equal(t, law.stop_times)


def test_eval_times_are_monitoring_points():
    # off-grid evaluation times: a recorded X_t is never inside the stopping region unstopped
    g = np.linspace(-1.5, 1.5, 61)
    r = Barrier.from_nodes(g, np.maximum(0.0, 0.4 * (1 - g**2)), 1.0)
    times = (0.05137, 0.2003, 0.36333)
    ens = simulate_paths(BM, dirac(0.0), r, times, dt=1e-3, n_paths=20_000, seed=11)
    for t in times:
        x = ens.at(t)
        done = ens.tau <= t
        np.testing.assert_array_equal(x[done], ens.x_tau[done])
        assert np.all(r(x[~done]) > t - 1e-12)
    const = simulate_paths(BM, dirac(0.0), Barrier.constant(0.36333, -20, 20), (0.36333,), dt=1e-3,
                           n_paths=2000, seed=1)
    assert np.all(const.tau == 0.36333)
    np.testing.assert_array_equal(const.at(0.36333), const.x_tau)
