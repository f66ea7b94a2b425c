"""Empirical checks of the barrier continuity theory, and the discontinuous counterexample."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import yaml

from .barrier import INF, Barrier, continuity_modulus, evaluate, paste_barriers
from .diffusion import DiffusionSpec, EmpiricalLaw, PathEnsemble, density_sup_bound, simulate_paths
from .measure import Measure, gaussian, measure_sum, mixture_measure
from .solver import EmbeddingProblem, SolveGrid, solve


class HypothesisError(ValueError):
    """A declared check does not satisfy the hypotheses of the statement it tests."""


class GateError(ValueError):
    """The theorem suite refuses a problem that does not meet the theorem's hypotheses."""


class SubSolveError(RuntimeError):
    def __init__(self, index: int, cause: Exception):
        super().__init__(f"counterexample sub-solve on interval {index} failed: {cause}")
        self.index = index


@dataclass
class Check:
    name: str
    passed: bool | None  # None: skipped because the precondition does not hold
    statistic: float
    threshold: float
    n_samples: int = 0
    seed: int | None = None
    note: str = ""

    @property
    def status(self) -> str:
        return {True: "pass", False: "fail", None: "skipped"}[self.passed]


@dataclass
class VerificationReport:
    scenario: dict = field(default_factory=dict)
    checks: list[Check] = field(default_factory=list)

    def add(self, check: Check) -> Check:
        self.checks.append(check)
        return check

    def extend(self, other: "VerificationReport") -> None:
        self.checks.extend(other.checks)

    @property
    def passed(self) -> bool:
        return all(c.passed is not False for c in self.checks)

    def failures(self) -> list[Check]:
        return [c for c in self.checks if c.passed is False]

    def to_dict(self) -> dict:
        checks = []
        for c in self.checks:
            d = asdict(c)
            d["passed"] = c.status
            for key in ("statistic", "threshold"):
                d[key] = float(d[key])
            checks.append(d)
        return {"scenario": self.scenario, "passed": self.passed, "checks": checks}

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


# --- distances and sampling helpers --------------------------------------


def ks_distance(e, m: Measure) -> float:
    """Kolmogorov-Smirnov distance between samples (or an EmpiricalLaw) and a probability measure."""
    x = np.sort(np.asarray(e.samples if isinstance(e, EmpiricalLaw) else e, dtype=float))
    n = x.size
    f = m.cdf(x) / m.total
    # the measure's cdf just below each sample, for atoms
    f_left = m.cdf(np.nextafter(x, -np.inf)) / m.total
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - f), np.max(f_left - (i - 1) / n)))


def _mean_se(d: np.ndarray) -> tuple[float, float]:
    d = np.asarray(d, dtype=float)
    se = float(d.std(ddof=1) / math.sqrt(d.size)) if d.size > 1 else 0.0
    return float(d.mean()), se


@dataclass(frozen=True)
class SimParams:
    dt: float = 2.5e-4
    n_paths: int = 100_000
    seed: int = 0


# --- corridor lemmas --------------------------------------------------------


def barrier_inf(r: Barrier, lo: float, hi: float) -> float:
    """Infimum of the barrier over the open interval (lo, hi)."""
    g = r.grid
    if lo < g[0] or hi > g[-1]:
        return 0.0
    pts = r.point_values()
    inside = (g > lo) & (g < hi)
    cells = (g[1:] > lo) & (g[:-1] < hi)
    vals = np.concatenate([pts[inside], r.cells[cells]])
    return float(vals.min()) if vals.size else float(evaluate(r, 0.5 * (lo + hi)))


@dataclass(frozen=True)
class CorridorSpec:
    """Corridor (x, y) with sub-intervals A and times s <= t.

    Hypotheses: t >= s >= r(x) v r(y) and r(A) >= t.
    """

    x: float
    y: float
    s: float
    t: float
    A: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        if not self.x < self.y:
            raise HypothesisError(f"corridor needs x < y, got ({self.x}, {self.y})")
        if self.s > self.t:
            raise HypothesisError(f"corridor needs s <= t, got s={self.s}, t={self.t}")
        for lo, hi in self.A:
            if not (self.x <= lo <= hi <= self.y):
                raise HypothesisError(f"A-interval ({lo}, {hi}) is not inside ({self.x}, {self.y})")
        object.__setattr__(self, "A", tuple((float(a), float(b)) for a, b in self.A))

    @property
    def A_length(self) -> float:
        return math.fsum(hi - lo for lo, hi in self.A)

    def validate(self, r: Barrier) -> None:
        rx, ry = evaluate(r, self.x), evaluate(r, self.y)
        if self.s < max(rx, ry):
            raise HypothesisError(
                f"violated s >= r(x) v r(y): s={self.s} < max(r({self.x})={rx}, r({self.y})={ry})"
            )
        for lo, hi in self.A:
            ra = barrier_inf(r, lo, hi)
            if ra < self.t:
                raise HypothesisError(f"violated r(A) >= t: inf r on ({lo}, {hi}) = {ra} < t={self.t}")

    def contains(self, v: np.ndarray) -> np.ndarray:
        return (v > self.x) & (v < self.y)

    def in_A(self, v: np.ndarray) -> np.ndarray:
        hit = np.zeros(v.shape, dtype=bool)
        for lo, hi in self.A:
            hit |= (v > lo) & (v < hi)
        return hit


def corridor_ensemble(
    problem: EmbeddingProblem, r: Barrier, corridors: Sequence[CorridorSpec], sim: SimParams
) -> PathEnsemble:
    """One path ensemble carrying every time any of the corridors needs."""
    times = sorted({c.s for c in corridors} | {c.t for c in corridors})
    return simulate_paths(problem.diffusion, problem.initial, r, times, sim.dt, sim.n_paths, sim.seed)


def check_corridor_monotonicity(
    problem: EmbeddingProblem,
    r: Barrier,
    c: CorridorSpec,
    sim: SimParams = SimParams(),
    ensemble: PathEnsemble | None = None,
    name: str = "continuous_crossing",
) -> Check:
    """mu[(x,y)] <= mu_t[(x,y)] + 3 SE, both sides on the same paths."""
    c.validate(r)
    ens = corridor_ensemble(problem, r, [c], sim) if ensemble is None else ensemble
    d = c.contains(ens.x_tau).astype(float) - c.contains(ens.at(c.t)).astype(float)
    mean, se = _mean_se(d)
    return Check(
        name, bool(mean <= 3 * se), mean, 3 * se, ens.n_paths, ens.seed,
        f"corridor ({c.x}, {c.y}), t={c.t}; statistic = mu[(x,y)] - mu_t[(x,y)]",
    )


def check_corridor_bound(
    problem: EmbeddingProblem,
    r: Barrier,
    c: CorridorSpec,
    sim: SimParams = SimParams(),
    ensemble: PathEnsemble | None = None,
    name: str = "estimates",
) -> Check:
    """mu_t[A] <= |A| k_{x,y} mu_s[(x,y)] + 3 SE with k_{x,y} the transition density bound."""
    c.validate(r)
    if c.A_length == 0:
        return Check(name, True, 0.0, 0.0, 0, None, "A has length 0")
    if not c.t > c.s:
        raise HypothesisError("the density bound needs t > s")
    k = density_sup_bound(problem.diffusion, c.s, c.t, c.x, c.y)
    ens = corridor_ensemble(problem, r, [c], sim) if ensemble is None else ensemble
    d = c.in_A(ens.at(c.t)).astype(float) - c.A_length * k * c.contains(ens.at(c.s)).astype(float)
    mean, se = _mean_se(d)
    return Check(
        name, bool(mean <= 3 * se), mean, 3 * se, ens.n_paths, ens.seed,
        f"corridor ({c.x}, {c.y}), s={c.s}, t={c.t}, |A|={c.A_length:.6g}, k={k:.6g}; "
        "statistic = mu_t[A] - |A| k mu_s[(x,y)]",
    )


def check_nested_bound(spec: DiffusionSpec, outer: CorridorSpec, inner: CorridorSpec) -> Check:
    """Shrinking the corridor never increases the density bound (exact)."""
    if not (outer.x <= inner.x and inner.y <= outer.y):
        raise HypothesisError("inner corridor is not nested in the outer one")
    k_out = density_sup_bound(spec, outer.s, outer.t, outer.x, outer.y)
    k_in = density_sup_bound(spec, outer.s, outer.t, inner.x, inner.y)
    return Check("estimates_nested_bound", bool(k_in <= k_out), k_in, k_out, 0, None, "k_inner <= k_outer")


# --- exact density-ratio scans -------------------------------------------


def _mass_in(m: Measure, lo: float, hi: float, J) -> float:
    if J is None:
        return m.mass(lo, hi)
    total = 0.0
    for a, b in J:
        a, b = max(a, lo), min(b, hi)
        if a < b:
            total += m.mass(a, b)
    return total


def _check_scan(x, eps_seq, y_seq):
    eps_seq = np.asarray(eps_seq, dtype=float)
    y_seq = np.asarray(y_seq, dtype=float)
    if eps_seq.shape != y_seq.shape:
        raise ValueError("eps_seq and y_seq must be aligned")
    if np.any(eps_seq <= 0) or np.any(np.diff(eps_seq) > 0):
        raise ValueError("eps_seq must be positive and nonincreasing")
    if np.any(np.diff(y_seq) > 0):
        raise ValueError("y_seq must be nonincreasing")
    return eps_seq, y_seq


def density_ratio_scan_right(m: Measure, x: float, eps_seq, y_seq, J=None) -> np.ndarray:
    """m[(y, y+eps)] / eps along the scan; windows are cut down to J when given."""
    eps_seq, y_seq = _check_scan(x, eps_seq, y_seq)
    if np.any(y_seq < x):
        raise ValueError("y_seq must approach x from the right")
    return np.array([_mass_in(m, y, y + e, J) / e for y, e in zip(y_seq, eps_seq)])


def density_ratio_scan_sym(m: Measure, x: float, eps_seq, y_seq, J=None) -> np.ndarray:
    """m[(y-eps, y+eps)] / eps along the scan."""
    eps_seq, y_seq = _check_scan(x, eps_seq, y_seq)
    return np.array([_mass_in(m, y - e, y + e, J) / e for y, e in zip(y_seq, eps_seq)])


# --- barrier-shape lemmas ----------------------------------------------------


def atom_consistency(m: Measure, r: Barrier, dt: float, window: int = 3) -> Check:
    """Grid points where the barrier jumps up by more than two time steps must carry an atom.

    The right-liminf proxy is the minimum of the next ``window`` cells; the
    left-hand version (by reflection) uses the previous cells.  A flagged
    grid point is explained by an atom lying within its two adjacent cells.
    """
    g, c = r.grid, r.cells
    pv = r.point_values()
    atoms = np.array([a for a, _ in m.atoms]) if m.atoms else np.empty(0)
    explained, unexplained, sides = set(), [], {}
    for i in range(g.size):
        if math.isinf(pv[i]):
            continue
        right = c[i : i + window]
        left = c[max(0, i - window) : i]
        for side, win in (("right", right), ("left (by reflection)", left)):
            if win.size == 0 or not win.min() - pv[i] > 2 * dt:
                continue
            lo, hi = g[max(i - 1, 0)], g[min(i + 1, g.size - 1)]
            near = atoms[(atoms >= lo) & (atoms <= hi)]
            if near.size:
                a = float(near[np.argmin(np.abs(near - g[i]))])
                explained.add(a)
                sides.setdefault(a, set()).add(side)
            else:
                unexplained.append(float(g[i]))
    flagged = sorted(explained) + sorted(set(unexplained))
    note = f"flagged={flagged}"
    if unexplained:
        note += f"; no atom at {sorted(set(unexplained))}"
    check = Check("atom_consistency", not unexplained, float(len(set(unexplained))), 0.0, 0, None, note)
    check.flagged = flagged  # type: ignore[attr-defined]
    return check


def tail_zero_check(m: Measure, r: Barrier, x: float, dt: float, side: str = "right",
                    spec: DiffusionSpec | None = None) -> Check:
    """If m has no mass beyond x then the barrier vanishes there (up to two time steps)."""
    name = f"tail_zero_{side}"
    if spec is not None and spec.kind not in ("brownian", "geometric"):
        return Check(name, None, math.nan, 2 * dt, note="underlying process not in the local-martingale catalogue")
    tail = m.mass(x, math.inf) if side == "right" else m.mass(-math.inf, x)
    if tail > 0:
        return Check(name, None, tail, 0.0, note=f"precondition fails: tail mass {tail:.6g} > 0")
    g = r.grid
    if side == "right":
        pts, cells = g >= x, g[:-1] >= x
    else:
        pts, cells = g <= x, g[1:] <= x
    vals = np.concatenate([r.point_values()[pts], r.cells[cells]])
    worst = float(vals.max()) if vals.size else 0.0
    return Check(name, bool(worst <= 2 * dt), worst, 2 * dt, note=f"x={x}")


# --- counterexample --------------------------------------------------------


def dyadic_points(x: float, n_intervals: int) -> np.ndarray:
    return x + 2.0 ** (1 - np.arange(1, n_intervals + 2))


def counterexample_measure(x: float = 0.0, n_intervals: int = 3, n_cells: int = 64, phi: Measure | None = None):
    """Target law and its pieces: mixture measures on (x_{i+1}, x_i), the normal law elsewhere.

    Returns (mu, pieces) with pieces a list of (a, b, nu_i, eta_i).
    """
    if n_intervals < 3:
        raise ValueError("the construction needs at least 3 intervals")
    phi = gaussian(0.0, 1.0) if phi is None else phi
    xs = dyadic_points(x, n_intervals)
    pieces = []
    for i in range(n_intervals):
        b, a = float(xs[i]), float(xs[i + 1])
        nu = phi.restricted(a, b)
        pieces.append((a, b, nu, mixture_measure(nu, a, b, n_cells)))
    rest = [phi.restricted(-math.inf, float(xs[-1])), phi.restricted(float(xs[0]), math.inf)]
    mu = measure_sum([p[3] for p in pieces] + rest)
    return mu, pieces


def build_counterexample(
    x: float = 0.0,
    n_intervals: int = 3,
    grid: SolveGrid | None = None,
    n_cells: int = 64,
    diffusion: DiffusionSpec | None = None,
) -> tuple[Measure, Barrier, VerificationReport]:
    """Assemble the discontinuous barrier: level 1, plus a sub-barrier inside each interval."""
    grid = SolveGrid(t_cap=3.0) if grid is None else grid
    diffusion = DiffusionSpec.brownian() if diffusion is None else diffusion
    phi = gaussian(0.0, 1.0)
    mu, parts = counterexample_measure(x, n_intervals, n_cells, phi)
    pieces = []
    for i, (a, b, nu, eta) in enumerate(parts, start=1):
        pad = (b - a) / 8
        sub = SolveGrid(
            n_x=grid.n_x, n_t=grid.n_t, t_cap=grid.t_cap, x_min=a - pad, x_max=b + pad,
            theta=grid.theta, psor_tol=grid.psor_tol, psor_max_iters=grid.psor_max_iters,
            omega=grid.omega, contact_tol=grid.contact_tol,
        )
        try:
            rb, _ = solve(EmbeddingProblem(nu.normalized(), eta.normalized(), diffusion), sub)
        except Exception as exc:
            raise SubSolveError(i, exc) from exc
        pieces.append(((a, b), rb))
    lo, hi = phi.support
    r = paste_barriers(1.0, pieces, span=(lo - 0.5, hi + 0.5))
    xs = dyadic_points(x, n_intervals)
    dt = grid.dt
    report = VerificationReport({"suite": "counterexample", "x": x, "n_intervals": n_intervals, "n_cells": n_cells})
    at_points = np.array([evaluate(r, v) for v in xs])
    worst = float(np.max(np.abs(at_points - 1.0)))
    report.add(Check("a_level_one_at_points", worst <= 2 * dt, worst, 2 * dt, note=f"r(x_i) = {at_points.tolist()}"))
    mids = 0.5 * (xs[:-1] + xs[1:])
    at_mids = np.array([evaluate(r, v) for v in mids])
    n_finite = int(np.sum(np.isfinite(at_mids)))
    report.add(Check("b_inf_at_midpoints", n_finite == 0, float(n_finite), 0.0, note=f"r(mid_i) = {at_mids.tolist()}"))
    quarter = [((3 * xs[i + 1] + xs[i]) / 4, (xs[i + 1] + 3 * xs[i]) / 4) for i in range(n_intervals)]
    masses = [mu.mass(float(a), float(b)) for a, b in quarter]
    report.add(Check("c_zero_mass_middle_halves", all(v == 0.0 for v in masses), float(max(masses)), 0.0))
    atom_free = (not mu.has_atoms) and len(mu.pieces) > 0
    report.add(Check("d_atom_free_with_density", atom_free, float(len(mu.atoms)), 0.0))
    mod, where = continuity_modulus(r)
    report.add(Check("continuity_modulus_inf", math.isinf(mod), mod, INF, note=f"at x={where}"))
    eps = 2.0 ** -np.arange(6, 12)
    ratios = density_ratio_scan_sym(mu, float(mids[0]), eps, np.full(eps.size, float(mids[0])))
    report.add(Check("midpoint_density_scan_zero", bool(np.all(ratios == 0.0)), float(ratios.max()), 0.0))
    return mu, r, report


# --- theorem proxy ------------------------------------------------------------


def density_gate(problem: EmbeddingProblem, x_grid, tol: float = 1e-8) -> float:
    """Smallest target density on the embedding set; raises GateError when not bounded below."""
    target = problem.target
    if target.has_atoms:
        raise GateError("theorem suite refused: target has atoms")
    x_grid = np.asarray(x_grid, dtype=float)
    gap = problem.initial.potential(x_grid) - target.potential(x_grid)
    inside = np.flatnonzero(gap > tol)
    if inside.size == 0:
        raise GateError("theorem suite refused: embedding set is empty")
    runs = np.split(inside, np.flatnonzero(np.diff(inside) > 1) + 1)
    k = min(target.min_density_on(float(x_grid[run[0]]), float(x_grid[run[-1]])) for run in runs)
    if not k > 0:
        raise GateError("theorem suite refused: density not bounded below on the embedding set")
    return float(k)


def theorem_suite(problem: EmbeddingProblem, grids: Sequence[SolveGrid]) -> VerificationReport:
    """Finite barrier without INF cells on every grid, continuity modulus nonincreasing under refinement."""
    if not grids:
        raise ValueError("theorem suite needs at least one grid")
    finest = max(grids, key=lambda g: g.n_x)
    lo, hi = finest.x_range(problem)
    k = density_gate(problem, np.linspace(lo, hi, finest.n_x), finest.tol)
    report = VerificationReport({"suite": "theorem", "density_lower_bound": k})
    moduli = []
    for g in grids:
        r, _ = solve(problem, g)
        n_inf = int(np.sum(np.isinf(r.cells)))
        report.add(Check(f"finite_{g.n_x}x{g.n_t}", n_inf == 0, float(n_inf), 0.0))
        mod, where = continuity_modulus(r)
        moduli.append(mod)
        report.add(Check(f"modulus_{g.n_x}x{g.n_t}", None if len(moduli) == 1 else bool(mod <= moduli[-2]),
                         mod, moduli[-2] if len(moduli) > 1 else INF, note=f"max jump at x={where}"))
    return report
