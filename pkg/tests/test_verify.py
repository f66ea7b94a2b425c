import math

import numpy as np
import pytest
import yaml

from rootbarrier.barrier import INF, Barrier
from rootbarrier.measure import dirac, discrete, gaussian, uniform
from rootbarrier.solver import EmbeddingProblem, SolveGrid
from rootbarrier.verify import (
    Check, CorridorSpec, GateError, HypothesisError, SimParams, VerificationReport, atom_consistency,
    build_counterexample, check_corridor_bound, check_corridor_monotonicity, check_nested_bound,
    counterexample_measure, density_gate, density_ratio_scan_right, density_ratio_scan_sym, dyadic_points,
    ks_distance, tail_zero_check, theorem_suite,
)
from rootbarrier.diffusion import DiffusionSpec

DT = 2.0 / 600
EPS = 2.0 ** -np.arange(3, 12)


# --- ks ------------------------------------------------------------------------------------


def test_ks_inverse_cdf_grid():
    m = gaussian()
    n = 2000
    x = m.ppf((np.arange(n) + 0.5) / n)
    assert ks_distance(x, m) <= 1.0 / n


def test_ks_atoms():
    m = discrete([-1.0, 1.0], [0.5, 0.5])
    assert ks_distance(np.array([-1.0, 1.0]), m) == pytest.approx(0.0, abs=1e-15)
    assert ks_distance(np.array([-1.0, -1.0]), m) == pytest.approx(0.5)


# --- corridors ------------------------------------------------------------------------------


def test_corridor_constant_barrier_equality():
    prob = EmbeddingProblem(dirac(0.0), gaussian())
    r = Barrier.constant(1.0, -20, 20)
    c = CorridorSpec(-0.5, 0.5, 1.0, 1.0)
    chk = check_corridor_monotonicity(prob, r, c, SimParams(dt=1e-2, n_paths=20_000, seed=1))
    assert chk.passed and chk.statistic == 0.0


def test_corridor_uniform_hill(uniform_problem, uniform_solved):
    r, _ = uniform_solved
    c = CorridorSpec(-0.8, 0.8, float(max(r(-0.8), r(0.8))), float(max(r(-0.8), r(0.8))))
    chk = check_corridor_monotonicity(uniform_problem, r, c, SimParams(dt=1e-3, n_paths=20_000, seed=2))
    # past t every exit from the corridor is stopped at its edge, so the two sides agree
    assert chk.passed and abs(chk.statistic) <= 3 * chk.threshold + 1e-3


def test_corridor_hypotheses():
    r = Barrier.constant(1.0, -5, 5)
    with pytest.raises(HypothesisError):
        CorridorSpec(-0.5, 0.5, 0.5, 1.0).validate(r)
    with pytest.raises(HypothesisError):
        CorridorSpec(0.5, -0.5, 1.0, 1.0)
    with pytest.raises(HypothesisError):
        CorridorSpec(-0.5, 0.5, 1.0, 1.0, A=((0.4, 0.7),))
    with pytest.raises(HypothesisError):
        CorridorSpec(-0.5, 0.5, 1.0, 1.0, A=((-0.1, 0.1),)).validate(r.__class__.constant(0.5, -5, 5))


def test_corridor_bound_empty_A():
    prob = EmbeddingProblem(dirac(0.0), gaussian())
    chk = check_corridor_bound(prob, Barrier.constant(1.0, -5, 5), CorridorSpec(-1, 1, 1.0, 1.0))
    assert chk.passed and chk.statistic == 0.0


def test_corridor_bound_uniform_strip(uniform_problem, uniform_solved):
    r, _ = uniform_solved
    c = CorridorSpec(-1.2, 1.2, 0.1, 0.3, A=((-0.05, 0.05),))
    chk = check_corridor_bound(uniform_problem, r, c, SimParams(dt=1e-3, n_paths=20_000, seed=3))
    assert chk.passed and chk.statistic < 0


def test_nested_bound():
    outer = CorridorSpec(0.5, 3.0, 0.2, 0.7)
    inner = CorridorSpec(1.0, 2.0, 0.2, 0.7)
    for spec in (DiffusionSpec.brownian(), DiffusionSpec.geometric()):
        assert check_nested_bound(spec, outer, inner).passed
    with pytest.raises(HypothesisError):
        check_nested_bound(DiffusionSpec.brownian(), inner, outer)


# --- exact scans --------------------------------------------------------------------------


def test_scan_uniform():
    m = uniform(0.0, 1.0)
    np.testing.assert_allclose(density_ratio_scan_right(m, 0.5, EPS, np.full(EPS.size, 0.5)), 1.0, rtol=1e-12)
    np.testing.assert_allclose(density_ratio_scan_sym(m, 0.5, EPS, np.full(EPS.size, 0.5)), 2.0, rtol=1e-12)


def test_scan_density_lower_bound():
    m = gaussian().restricted(-1, 1)
    ratios = density_ratio_scan_right(m, 0.2, EPS, 0.2 + EPS)
    assert np.all(ratios >= m.min_density_on(0.2, 0.5) - 1e-12)


def test_scan_normal_at_zero():
    ratios = density_ratio_scan_sym(gaussian(), 0.0, EPS, np.zeros(EPS.size))
    assert ratios[-1] == pytest.approx(2 * 0.398942, abs=1e-5)
    assert np.all(np.diff(ratios) >= -1e-12)


def test_scan_counterexample_gap_zero():
    mu, _ = counterexample_measure(0.0, 3)
    xs = dyadic_points(0.0, 3)
    mid = 0.5 * (xs[0] + xs[1])
    small = EPS[EPS < (xs[0] - xs[1]) / 4]
    assert np.all(density_ratio_scan_right(mu, mid, small, np.full(small.size, mid)) == 0.0)


def test_scan_within_J():
    m = uniform(-1.0, 1.0)
    J = [(-1.0, 0.0)]
    # density 1/2, only the left half-window lies in J
    ratios = density_ratio_scan_sym(m, 0.0, EPS, np.zeros(EPS.size), J=J)
    np.testing.assert_allclose(ratios, 0.5, rtol=1e-12)


def test_scan_bad_sequences():
    with pytest.raises(ValueError):
        density_ratio_scan_right(uniform(0, 1), 0.5, [0.1, 0.2], [0.5, 0.5])
    with pytest.raises(ValueError):
        density_ratio_scan_right(uniform(0, 1), 0.5, [0.1], [0.4])


# --- barrier-shape checks ----------------------------------------------------------------------


def test_atom_consistency_smooth_barrier_passes():
    g = np.linspace(-1, 1, 201)
    r = Barrier.from_nodes(g, 1 - g**2, 1.0)
    chk = atom_consistency(uniform(-1, 1), r, 0.01)
    assert chk.passed and chk.flagged == []


def test_atom_consistency_down_spike_fails():
    g = np.linspace(-1, 1, 201)
    r = Barrier.from_nodes(g, 1 - g**2, 1.0)
    pts = r.point_values().copy()
    pts[100] = 0.0
    spiked = Barrier(r.grid, r.cells, pts, r.t_cap)
    chk = atom_consistency(uniform(-1, 1), spiked, 0.01)
    assert chk.passed is False and chk.flagged == [0.0]
    # the same spike is explained when the target has an atom there
    atom = discrete([-0.5, 0.0, 0.5], [0.25, 0.5, 0.25])
    assert atom_consistency(atom, spiked, 0.01).passed


def test_atom_consistency_twopoint(twopoint_problem, twopoint_solved):
    chk = atom_consistency(twopoint_problem.target, twopoint_solved[0], DT)
    assert chk.passed
    assert chk.flagged == [-1.0, 1.0]


def test_tail_zero(uniform_problem, uniform_solved):
    r, _ = uniform_solved
    m = uniform_problem.target
    assert tail_zero_check(m, r, 1.0, DT).passed
    assert tail_zero_check(m, r, -1.0, DT, side="left").passed
    assert tail_zero_check(m, r, 0.0, DT).passed is None
    aff = DiffusionSpec("affine", {"alpha": 1.0, "beta": 0.0})
    assert tail_zero_check(m, r, 1.0, DT, spec=aff).passed is None


def test_tail_zero_counterexample_skipped():
    mu, _ = counterexample_measure(0.0, 3)
    chk = tail_zero_check(mu, Barrier.constant(1.0, -6, 6), 1.0, DT)
    assert chk.passed is None


# --- counterexample and theorem --------------------------------------------------------------


@pytest.mark.parametrize("n", [3, 4, 5])
def test_counterexample(n):
    mu, r, rep = build_counterexample(0.0, n, SolveGrid(n_x=300, n_t=300, t_cap=3.0))
    assert rep.passed, [c.note for c in rep.failures()]
    assert {c.name for c in rep.checks} >= {
        "a_level_one_at_points", "b_inf_at_midpoints", "c_zero_mass_middle_halves", "d_atom_free_with_density",
    }
    assert math.isinf(r(0.75))
    assert mu.total == pytest.approx(1.0, abs=1e-10)


def test_counterexample_rejects_short():
    with pytest.raises(ValueError):
        counterexample_measure(0.0, 2)


def test_theorem_gate():
    mu, _ = counterexample_measure(0.0, 3)
    with pytest.raises(GateError):
        density_gate(EmbeddingProblem(dirac(0.0), mu), np.linspace(-6, 6, 1201))
    with pytest.raises(GateError):
        theorem_suite(EmbeddingProblem(dirac(0.0), discrete([-1, 1], [0.5, 0.5])), [SolveGrid()])


def test_theorem_suite_uniform():
    prob = EmbeddingProblem(dirac(0.0), uniform(-1, 1))
    rep = theorem_suite(prob, [SolveGrid(n_x=150, n_t=150), SolveGrid(n_x=300, n_t=300)])
    assert rep.passed
    assert rep.scenario["density_lower_bound"] == pytest.approx(0.5)
    assert [c.status for c in rep.checks] == ["pass", "skipped", "pass", "pass"]


def test_report_yaml_round_trip():
    rep = VerificationReport({"name": "x"})
    rep.add(Check("a", True, 0.1, 0.2, 10, 3))
    rep.add(Check("b", None, math.nan, 0.0))
    doc = yaml.safe_load(rep.to_yaml())
    assert doc["passed"] is True
    assert [c["passed"] for c in doc["checks"]] == ["pass", "skipped"]
    assert doc["checks"][0]["n_samples"] == 10 and doc["checks"][0]["seed"] == 3
