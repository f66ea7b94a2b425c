"""Root barrier from the parabolic obstacle problem.

The value u(t, x) solves min(u_t - sigma^2 u_xx / 2, u - u_mu) = 0 with
u(0, .) = u_mu0, and the barrier is the first time u touches the obstacle.
The scheme works with the gap w = u - u_mu >= 0, which turns every time
step into a linear complementarity problem solved by projected SOR.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .barrier import INF, Barrier, regularize
from .diffusion import DiffusionSpec, _sigma
from .measure import Measure, MeanMismatchError, _runs_above, convex_order


class ConvexOrderError(ValueError):
    def __init__(self, witness):
        super().__init__(f"initial law does not precede the target in convex order (violation at x={witness})")
        self.witness = witness


class GridError(ValueError):
    pass


class PSORConvergenceError(RuntimeError):
    def __init__(self, step: int, iters: int):
        super().__init__(f"PSOR did not converge at time index {step} within {iters} iterations")
        self.step = step


class SchemeViolationError(RuntimeError):
    pass


@dataclass(frozen=True)
class EmbeddingProblem:
    initial: Measure
    target: Measure
    diffusion: DiffusionSpec = field(default_factory=DiffusionSpec.brownian)

    def __post_init__(self):
        lo, hi = self.diffusion.domain
        for name, m in (("initial", self.initial), ("target", self.target)):
            s_lo, s_hi = m.support
            if s_lo < lo or s_hi > hi:
                raise ValueError(f"{name} law support [{s_lo}, {s_hi}] leaves the domain ({lo}, {hi})")


@dataclass(frozen=True)
class SolveGrid:
    """Space-time mesh.  x_min / x_max default to the supports plus a margin."""

    n_x: int = 600
    n_t: int = 600
    t_cap: float = 2.0
    x_min: float | None = None
    x_max: float | None = None
    theta: float = 1.0
    psor_tol: float = 1e-9
    psor_max_iters: int = 10_000
    omega: float = 1.5
    contact_tol: float | None = None
    margin: float = 0.5

    def __post_init__(self):
        if self.n_x < 16 or self.n_t < 16:
            raise GridError("n_x and n_t must be at least 16")
        if not 0.5 <= self.theta <= 1.0:
            raise GridError("theta must lie in [1/2, 1]")
        if not self.t_cap > 0:
            raise GridError("t_cap must be positive")
        if not 0 < self.omega < 2:
            raise GridError("omega must lie in (0, 2)")
        if self.x_min is not None and self.x_max is not None and not self.x_min < self.x_max:
            raise GridError("x_min must be below x_max")

    @property
    def dt(self) -> float:
        return self.t_cap / self.n_t

    @property
    def tol(self) -> float:
        return 10 * self.psor_tol if self.contact_tol is None else self.contact_tol

    def x_range(self, problem: EmbeddingProblem) -> tuple[float, float]:
        lo = min(problem.initial.support[0], problem.target.support[0]) - self.margin
        hi = max(problem.initial.support[1], problem.target.support[1]) + self.margin
        x_min = lo if self.x_min is None else self.x_min
        x_max = hi if self.x_max is None else self.x_max
        d_lo, d_hi = problem.diffusion.domain
        # absorbing treatment: never step outside the diffusion's domain
        return max(x_min, d_lo), min(x_max, d_hi)


@dataclass
class ValueSurface:
    x_grid: np.ndarray
    t_grid: np.ndarray
    u: np.ndarray  # (len(t_grid), len(x_grid))
    obstacle: np.ndarray
    charged: np.ndarray  # target mass in (x_{j-1}, x_{j+1})
    kinks: np.ndarray  # target atom in [x_{j-1}, x_{j+1}]
    sigma2: np.ndarray  # (len(t_grid), len(x_grid))
    theta: float = 1.0

    @property
    def gap(self) -> np.ndarray:
        return self.u - self.obstacle

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "x", "u"])
            for i, t in enumerate(self.t_grid):
                for j, x in enumerate(self.x_grid):
                    w.writerow([repr(float(t)), repr(float(x)), repr(float(self.u[i, j]))])


@nb.njit(cache=True)
def _step_rhs(w, s2_old, src, dt, dx2, theta, rhs):
    n = w.size
    rhs[:] = 0.0
    for j in range(1, n - 1):
        lap = (w[j - 1] - 2 * w[j] + w[j + 1]) / dx2
        rhs[j] = w[j] / dt + (1 - theta) * 0.5 * s2_old[j] * lap + src[j]


@nb.njit(cache=True)
def _lcp_residual(w, diag, off, rhs):
    worst = 0.0
    for j in range(1, w.size - 1):
        aw = diag[j] * w[j] + off[j] * (w[j - 1] + w[j + 1]) - rhs[j]
        r = abs(min(aw, w[j]))
        if r > worst:
            worst = r
    return worst


@nb.njit(cache=True)
def _psor(w, diag, off, rhs, omega, tol, max_iters):
    """Projected SOR in place; returns the iteration count or -1."""
    n = w.size
    for it in range(max_iters):
        change = 0.0
        for j in range(1, n - 1):
            gs = (rhs[j] - off[j] * (w[j - 1] + w[j + 1])) / diag[j]
            new = w[j] + omega * (gs - w[j])
            if new < 0.0:
                new = 0.0
            d = abs(new - w[j]) * diag[j]
            if d > change:
                change = d
            w[j] = new
        if change < tol and _lcp_residual(w, diag, off, rhs) < tol:
            return it + 1
    return -1


@nb.njit(cache=True)
def _howard(w, diag, off, rhs, max_iters):
    """Policy iteration for the complementarity problem; exact tridiagonal solve per active set.

    Gives PSOR a starting point that is already the solution, which matters
    when dt * sigma^2 / dx^2 is large and plain relaxation stalls.
    """
    n = w.size
    eq = np.zeros(n, dtype=np.bool_)
    cp = np.empty(n)
    dp = np.empty(n)
    for it in range(max_iters):
        changed = False
        for j in range(1, n - 1):
            aw = diag[j] * w[j] + off[j] * (w[j - 1] + w[j + 1]) - rhs[j]
            want = aw <= w[j]
            if it == 0 or want != eq[j]:
                changed = changed or want != eq[j]
                eq[j] = want
        if it > 0 and not changed:
            for j in range(n):
                if w[j] < 0.0:
                    w[j] = 0.0
            return it
        # Thomas sweep; pinned and inactive rows read w_j = 0
        cp[0] = 0.0
        dp[0] = 0.0
        for j in range(1, n):
            if j == n - 1 or not eq[j]:
                a, b, c, d = 0.0, 1.0, 0.0, 0.0
            else:
                a, b, c, d = off[j], diag[j], off[j], rhs[j]
            m = b - a * cp[j - 1]
            cp[j] = c / m
            dp[j] = (d - a * dp[j - 1]) / m
        w[n - 1] = dp[n - 1]
        for j in range(n - 2, -1, -1):
            w[j] = dp[j] - cp[j] * w[j + 1]
        w[0] = 0.0
    for j in range(n):
        if w[j] < 0.0:
            w[j] = 0.0
    return -1


@nb.njit(cache=True)
def _march(w0, d2psi, charged, x, t, code, par, tt, tx, tv, theta, omega, tol, max_iters, out, s2out):
    n_t = t.size - 1
    n = x.size
    dx2 = (x[1] - x[0]) ** 2
    dt = t[1] - t[0]
    rhs = np.empty(n)
    diag = np.empty(n)
    off = np.empty(n)
    src = np.empty(n)
    trial = np.empty(n)
    out[0, :] = w0
    for j in range(n):
        s = _sigma(code, par, tt, tx, tv, t[0], x[j])
        s2out[0, j] = s * s
    for k in range(n_t):
        for j in range(n):
            s = _sigma(code, par, tt, tx, tv, t[k + 1], x[j])
            s2out[k + 1, j] = s * s
        for j in range(n):
            s2m = theta * s2out[k + 1, j] + (1 - theta) * s2out[k, j]
            src[j] = 0.5 * s2m * d2psi[j] if charged[j] else 0.0
            lam = 0.5 * theta * s2out[k + 1, j] / dx2
            diag[j] = 1.0 / dt + 2 * lam
            off[j] = -lam
        _step_rhs(out[k], s2out[k], src, dt, dx2, theta, rhs)
        om = omega
        done = False
        for _ in range(3):
            trial[:] = out[k]
            trial[0] = 0.0
            trial[n - 1] = 0.0
            # policy iteration terminates within n rounds on these M-matrices
            _howard(trial, diag, off, rhs, n + 1)
            if _psor(trial, diag, off, rhs, om, tol, max_iters) >= 0:
                done = True
                break
            om = 0.5 * om
        if not done:
            return k + 1
        out[k + 1, :] = trial
    return 0


def _charged(target: Measure, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lo = np.concatenate([[-math.inf], x[:-1]])
    hi = np.concatenate([x[1:], [math.inf]])
    charged = np.array([target.mass(a, b) > 0 for a, b in zip(lo, hi)])
    atoms = np.asarray([a for a, _ in target.atoms], dtype=float) if target.atoms else np.empty(0)
    kinks = np.array([bool(np.any((atoms >= a) & (atoms <= b))) for a, b in zip(lo, hi)])
    return charged, kinks


def solve_surface(problem: EmbeddingProblem, grid: SolveGrid) -> ValueSurface:
    ok, witness = convex_order(problem.initial, problem.target, _check_grid(problem))
    if not ok:
        raise ConvexOrderError(witness)
    x_min, x_max = grid.x_range(problem)
    x = np.linspace(x_min, x_max, grid.n_x)
    t = np.linspace(0.0, grid.t_cap, grid.n_t + 1)
    u0 = problem.initial.potential(x)
    psi = problem.target.potential(x)
    w0 = u0 - psi
    tol = grid.tol
    if w0[0] > tol or w0[-1] > tol:
        raise GridError(
            f"x-range [{x_min}, {x_max}] does not reach past the supports: potential gap at the edges is "
            f"{w0[0]:.3g}, {w0[-1]:.3g}; widen the grid"
        )
    w0 = np.maximum(w0, 0.0)
    w0[0] = w0[-1] = 0.0
    dx2 = (x[1] - x[0]) ** 2
    d2psi = np.zeros_like(x)
    d2psi[1:-1] = (psi[:-2] - 2 * psi[1:-1] + psi[2:]) / dx2
    charged, kinks = _charged(problem.target, x)
    code, par, tt, tx, tv = problem.diffusion.packed()
    w = np.empty((t.size, x.size))
    s2 = np.empty_like(w)
    bad = _march(
        w0, d2psi, charged, x, t, code, par, tt, tx, tv,
        float(grid.theta), float(grid.omega), float(grid.psor_tol), int(grid.psor_max_iters), w, s2,
    )
    if bad:
        raise PSORConvergenceError(bad, grid.psor_max_iters)
    return ValueSurface(x, t, w + psi, psi, charged, kinks, s2, grid.theta)


def _check_grid(problem: EmbeddingProblem) -> np.ndarray:
    lo = min(problem.initial.support[0], problem.target.support[0])
    hi = max(problem.initial.support[1], problem.target.support[1])
    pts = [lo - 1, hi + 1]
    for m in (problem.initial, problem.target):
        pts += [a for a, _ in m.atoms] + [v for p in m.pieces for v in (p.a, p.b)]
    return np.union1d(np.linspace(lo - 1, hi + 1, 2001), pts)


def contact_times(surf: ValueSurface, contact_tol: float = 1e-8) -> np.ndarray:
    """First time index of contact per node, -1 when never in contact.

    A node is in contact when its initial gap is already within tolerance,
    or when it carries target mass and its gap has fallen within tolerance.
    A node with no target mass nearby and a positive initial gap can never
    touch the obstacle (its gap obeys a source-free heat equation), so it is
    never declared in contact even if the gap underflows.
    """
    gap = surf.gap
    contact = (gap <= contact_tol) & surf.charged[None, :]
    contact[:, gap[0] <= contact_tol] = True
    first = np.where(contact.any(axis=0), contact.argmax(axis=0), -1)
    # monotone contact: once touched, the gap stays within tolerance
    for j in np.flatnonzero(first > 0):
        after = gap[first[j]:, j]
        if after.max() > 2 * contact_tol + 1e-12:
            k = first[j] + int(np.argmax(after > 2 * contact_tol + 1e-12))
            raise SchemeViolationError(
                f"node x={surf.x_grid[j]:.6g} left contact at t={surf.t_grid[k]:.6g} (gap {after.max():.3g})"
            )
    return first


def extract_barrier(surf: ValueSurface, contact_tol: float = 1e-8) -> Barrier:
    first = contact_times(surf, contact_tol)
    r = np.where(first >= 0, surf.t_grid[np.maximum(first, 0)], INF)
    b = Barrier.from_nodes(surf.x_grid, r, float(surf.t_grid[-1]))
    return regularize(b, _runs_above(surf.x_grid, surf.gap[0], contact_tol))


def solve(problem: EmbeddingProblem, grid: SolveGrid | None = None) -> tuple[Barrier, ValueSurface]:
    grid = SolveGrid() if grid is None else grid
    surf = solve_surface(problem, grid)
    return extract_barrier(surf, grid.tol), surf


@dataclass
class ResidualReport:
    max_residual: float
    location: tuple[float, float]
    max_kink_residual: float
    kink_nodes: list[float]
    n_steps: int


def residual_report(surf: ValueSurface) -> ResidualReport:
    """Complementarity residual |min(u_t - sigma^2 u_xx / 2, u - u_mu)| of the discrete scheme."""
    u, x, t = surf.u, surf.x_grid, surf.t_grid
    kink_nodes = [float(v) for v in x[surf.kinks]]
    if t.size < 2:
        return ResidualReport(0.0, (float(t[0]), float(x[0])), 0.0, kink_nodes, 0)
    dt = t[1] - t[0]
    dx2 = (x[1] - x[0]) ** 2
    lap = np.zeros_like(u)
    lap[:, 1:-1] = (u[:, :-2] - 2 * u[:, 1:-1] + u[:, 2:]) / dx2
    th = surf.theta
    s2 = surf.sigma2
    pde = (u[1:] - u[:-1]) / dt - 0.5 * (th * s2[1:] * lap[1:] + (1 - th) * s2[:-1] * lap[:-1])
    # the scheme drops the obstacle's roundoff curvature where the target has no mass
    psi = surf.obstacle
    d2psi = np.zeros_like(psi)
    d2psi[1:-1] = (psi[:-2] - 2 * psi[1:-1] + psi[2:]) / dx2
    s2m = th * s2[1:] + (1 - th) * s2[:-1]
    pde += np.where(surf.charged, 0.0, 0.5 * s2m * d2psi)
    res = np.abs(np.minimum(pde, u[1:] - psi))
    res[:, 0] = res[:, -1] = 0.0
    regular = np.where(surf.kinks, 0.0, res)
    kink = np.where(surf.kinks, res, 0.0)
    k, j = np.unravel_index(int(np.argmax(regular)), regular.shape)
    return ResidualReport(
        float(regular[k, j]), (float(t[k + 1]), float(x[j])), float(kink.max()), kink_nodes, t.size - 1
    )
