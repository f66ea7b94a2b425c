"""Driftless diffusions dX = sigma(t, X) dW and barrier-stopped path simulation."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .barrier import Barrier
from .measure import Measure
from .rng import STREAM_BRIDGE, STREAM_INCREMENTS, configure_threads, normal_pair, split_seed, uniforms

BROWNIAN, GEOMETRIC, AFFINE, TABLE = 0, 1, 2, 3
KINDS = {"brownian": BROWNIAN, "geometric": GEOMETRIC, "affine": AFFINE, "table": TABLE}

STATUS_STOPPED, STATUS_CENSORED, STATUS_EXITED = 0, 1, 2


class NoClosedFormError(NotImplementedError):
    """Raised when a transition density is requested for a non-closed-form diffusion."""


@dataclass(frozen=True)
class DiffusionSpec:
    """Volatility from a closed catalogue, the open state domain and the constant k.

    ``params``: affine takes ``alpha, beta``; table takes ``t`` and ``x``
    grids and a ``values`` array of shape (len(t), len(x)), interpolated
    bilinearly and held constant beyond its edges.
    """

    kind: str = "brownian"
    params: dict = field(default_factory=dict)
    domain: tuple[float, float] = (-math.inf, math.inf)
    k: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown diffusion kind {self.kind!r}; expected one of {sorted(KINDS)}")
        lo, hi = self.domain
        if not lo < hi:
            raise ValueError("diffusion domain must be a nonempty open interval")
        if self.kind == "affine" and not {"alpha", "beta"} <= set(self.params):
            raise ValueError("affine diffusion needs params alpha and beta")
        if self.kind == "table":
            t, x, v = self._table()
            if v.shape != (t.size, x.size):
                raise ValueError("table values must have shape (len(t), len(x))")

    @classmethod
    def brownian(cls) -> "DiffusionSpec":
        return cls("brownian", {}, (-math.inf, math.inf), 1.0)

    @classmethod
    def geometric(cls) -> "DiffusionSpec":
        return cls("geometric", {}, (0.0, math.inf), 1.0)

    @property
    def code(self) -> int:
        return KINDS[self.kind]

    def _table(self):
        p = self.params
        return (
            np.asarray(p.get("t", [0.0]), dtype=float),
            np.asarray(p.get("x", [0.0]), dtype=float),
            np.atleast_2d(np.asarray(p.get("values", [[1.0]]), dtype=float)),
        )

    def packed(self):
        """Arguments for the compiled volatility: (code, params, t, x, values)."""
        par = np.zeros(2)
        if self.kind == "affine":
            par[:] = self.params["alpha"], self.params["beta"]
        t, x, v = self._table()
        return self.code, par, t, x, np.ascontiguousarray(v)

    def sigma(self, t, x):
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        code, par, tt, tx, tv = self.packed()
        tb, xb = np.broadcast_arrays(t, x)
        out = np.empty(tb.shape)
        _sigma_vec(code, par, tt, tx, tv, tb.ravel(), xb.ravel(), out.reshape(-1))
        return out if out.ndim else float(out)


@nb.njit(cache=True)
def _interp_index(grid, v):
    n = grid.size
    if n == 1 or v <= grid[0]:
        return 0, 0.0
    if v >= grid[n - 1]:
        return n - 2, 1.0
    i = np.searchsorted(grid, v, side="right") - 1
    return i, (v - grid[i]) / (grid[i + 1] - grid[i])


@nb.njit(cache=True)
def _sigma(code, par, tt, tx, tv, t, x):
    if code == BROWNIAN:
        return 1.0
    if code == GEOMETRIC:
        return x
    if code == AFFINE:
        return par[0] + par[1] * x
    i, a = _interp_index(tt, t)
    j, b = _interp_index(tx, x)
    if tt.size == 1 and tx.size == 1:
        return tv[0, 0]
    if tt.size == 1:
        return (1 - b) * tv[0, j] + b * tv[0, j + 1]
    if tx.size == 1:
        return (1 - a) * tv[i, 0] + a * tv[i + 1, 0]
    return (
        (1 - a) * (1 - b) * tv[i, j]
        + (1 - a) * b * tv[i, j + 1]
        + a * (1 - b) * tv[i + 1, j]
        + a * b * tv[i + 1, j + 1]
    )


@nb.njit(cache=True)
def _sigma_vec(code, par, tt, tx, tv, t, x, out):
    for i in range(t.size):
        out[i] = _sigma(code, par, tt, tx, tv, t[i], x[i])


# --- assumption checks ---------------------------------------------------


@dataclass
class AssumptionResult:
    name: str
    passed: bool | None
    statistic: float
    note: str = ""


@dataclass
class AssumptionReport:
    results: list[AssumptionResult]

    def __getitem__(self, name: str) -> AssumptionResult:
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)

    @property
    def passed(self) -> bool:
        return all(r.passed is not False for r in self.results)


def validate_assumptions(
    spec: DiffusionSpec,
    box: tuple[tuple[float, float], tuple[float, float]],
    initial: Measure | None = None,
    n_samples: int = 10_000,
    seed: int = 0,
) -> AssumptionReport:
    """Sampled checks of the Lipschitz, growth, nondegeneracy and smoothness assumptions."""
    (t0, t1), (x0, x1) = box
    if not (t1 >= t0 and x1 >= x0):
        raise ValueError("assumption box must be nonempty")
    rng = np.random.default_rng(seed)
    t = rng.uniform(t0, t1, n_samples)
    x = rng.uniform(x0, x1, n_samples)
    y = rng.uniform(x0, x1, n_samples)
    k = spec.k
    sx, sy = spec.sigma(t, x), spec.sigma(t, y)
    dxy = np.abs(x - y)
    with np.errstate(divide="ignore", invalid="ignore"):
        lip = np.where(dxy > 0, np.abs(sx - sy) / (k * dxy), 0.0)
    growth = np.abs(sx) / (k * (1 + np.abs(x)))
    results = [
        AssumptionResult("lipschitz", bool(lip.max() <= 1 + 1e-12), float(lip.max())),
        AssumptionResult("growth", bool(growth.max() <= 1 + 1e-12), float(growth.max())),
    ]
    # nondegeneracy on the part of the box inside the domain, dense deterministic grid
    lo, hi = spec.domain
    gx = np.concatenate([np.linspace(x0, x1, 2001), x])
    gt = np.concatenate([np.linspace(t0, t1, 2001), t])
    tt, xx = np.meshgrid(np.linspace(t0, t1, 21), gx, indexing="ij")
    inside = (xx > lo) & (xx < hi)
    lower = float(np.abs(spec.sigma(tt[inside], xx[inside])).min()) if inside.any() else math.nan
    lower = min(lower, float(np.abs(spec.sigma(gt, gx)).min())) if inside.any() else lower
    note = "" if inside.all() else "box extends beyond the domain; checked on the inside part"
    results.append(AssumptionResult("nondegenerate", bool(lower > 0), lower, note))
    if spec.kind == "table":
        results.append(AssumptionResult("smooth", None, math.nan, "unverified: tabulated volatility"))
    else:
        results.append(AssumptionResult("smooth", True, math.nan, "smooth by construction"))
    if initial is not None:
        s_lo, s_hi = initial.support
        ok = s_lo > lo and s_hi < hi
        results.append(AssumptionResult("initial_in_domain", ok, float(min(s_lo - lo, hi - s_hi))))
    return AssumptionReport(results)


def min_volatility(spec: DiffusionSpec, t_range, x_range, n: int = 2001) -> float:
    tt, xx = np.meshgrid(np.linspace(*t_range, 21), np.linspace(*x_range, n), indexing="ij")
    return float(np.abs(spec.sigma(tt, xx)).min())


# --- transition densities ------------------------------------------------


def transition_density(spec: DiffusionSpec, s: float, x: float, t: float, y):
    """Density of X_t at y given X_s = x, for Brownian and geometric motion."""
    if not t > s:
        raise ValueError("transition density needs t > s")
    v = t - s
    y = np.asarray(y, dtype=float)
    if spec.kind == "brownian":
        out = np.exp(-((y - x) ** 2) / (2 * v)) / math.sqrt(2 * math.pi * v)
    elif spec.kind == "geometric":
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.log(np.where(y > 0, y, 1.0) / x) + v / 2
            out = np.where(y > 0, np.exp(-(z**2) / (2 * v)) / (np.where(y > 0, y, 1.0) * math.sqrt(2 * math.pi * v)), 0.0)
    else:
        raise NoClosedFormError(f"no closed-form transition density for {spec.kind!r}")
    return float(out) if out.ndim == 0 else out


def density_sup_bound(spec: DiffusionSpec, s: float, t: float, x: float, y: float) -> float:
    """Supremum of the transition density over start and end points in [x, y]."""
    if not x <= y:
        raise ValueError("need x <= y")
    v = t - s
    if spec.kind == "brownian":
        if not v > 0:
            raise ValueError("transition density needs t > s")
        return 1.0 / math.sqrt(2 * math.pi * v)
    if spec.kind == "geometric":
        if x <= 0:
            raise ValueError("geometric bound needs 0 < x")
        # the maximum sits at end point x, start point clamp(x e^{v/2}, x, y)
        start = min(max(x * math.exp(v / 2), x), y)
        return transition_density(spec, s, start, t, x)
    raise NoClosedFormError(f"no closed-form transition density for {spec.kind!r}")


# --- simulation ------------------------------------------------------------


@nb.njit(cache=True, inline="always")
def _barrier_at(grid, cells, pts, x):
    n = grid.size
    if x < grid[0] or x > grid[n - 1]:
        return 0.0
    i = np.searchsorted(grid, x, side="right") - 1
    if grid[i] == x:
        return pts[i]
    return cells[i]


@nb.njit(parallel=True, cache=True)
def _run_paths(
    x0, offset, k0, k1,
    code, par, tt, tx, tv,
    grid, cells, pts,
    t_evals, horizon, dt, n_bisect, dom_lo, dom_hi,
    samples, x_tau, tau, status,
):
    n_paths = x0.size
    n_eval = t_evals.size
    n_steps = int(math.ceil(horizon / dt - 1e-9))
    eps = 1e-9 * dt
    for p in nb.prange(n_paths):
        idx = np.uint64(offset + p)
        c0 = idx & np.uint64(0xFFFFFFFF)
        c1 = idx >> np.uint64(32)
        x = x0[p]
        t = 0.0
        e = 0
        while e < n_eval and t_evals[e] <= 0.0:
            samples[p, e] = x
            e += 1
        st = STATUS_CENSORED
        if _barrier_at(grid, cells, pts, x) <= eps:
            st = STATUS_STOPPED
        z1 = 0.0
        if st != STATUS_STOPPED:
            for n in range(n_steps):
                if n % 2 == 0:
                    z, z1 = normal_pair(c0, c1, np.uint64(n // 2), np.uint64(STREAM_INCREMENTS), k0, k1)
                else:
                    z = z1
                t1 = min((n + 1) * dt, horizon)
                vol = _sigma(code, par, tt, tx, tv, t, x)
                x1 = x + vol * math.sqrt(t1 - t) * z
                # evaluation times inside the step are monitoring points, drawn
                # from the Brownian bridge of the Euler step
                while e < n_eval and t_evals[e] < t1 - eps:
                    te = t_evals[e]
                    zb, _ = normal_pair(c0, c1, np.uint64(e), np.uint64(STREAM_BRIDGE), k0, k1)
                    w = (te - t) / (t1 - t)
                    xe = x + w * (x1 - x) + vol * math.sqrt((te - t) * (1 - w)) * zb
                    if xe <= dom_lo or xe >= dom_hi or te >= _barrier_at(grid, cells, pts, xe) - eps:
                        break
                    samples[p, e] = xe
                    e += 1
                    x, t = xe, te
                if e < n_eval and t_evals[e] < t1 - eps:
                    # stopped or exited at the bridge point: resolve on [t, te]
                    t1, x1 = te, xe
                if x1 <= dom_lo or x1 >= dom_hi:
                    while e < n_eval:
                        samples[p, e] = x1
                        e += 1
                    x, t, st = x1, t1, STATUS_EXITED
                    break
                h = t1 - t
                if t1 >= _barrier_at(grid, cells, pts, x1) - eps:
                    lo, hi = t, t1
                    for _ in range(n_bisect):
                        mid = 0.5 * (lo + hi)
                        xm = x + (mid - t) / h * (x1 - x)
                        if mid >= _barrier_at(grid, cells, pts, xm) - eps:
                            hi = mid
                        else:
                            lo = mid
                    xs = x1 if hi == t1 else x + (hi - t) / h * (x1 - x)
                    while e < n_eval and t_evals[e] < hi:
                        te = t_evals[e]
                        samples[p, e] = x + (te - t) / h * (x1 - x)
                        e += 1
                    x, t, st = xs, hi, STATUS_STOPPED
                    break
                while e < n_eval and t_evals[e] <= t1 + eps:
                    samples[p, e] = x1
                    e += 1
                x, t = x1, t1
        while e < n_eval:
            samples[p, e] = x
            e += 1
        x_tau[p] = x
        tau[p] = t if st != STATUS_CENSORED else horizon
        status[p] = st


@dataclass
class PathEnsemble:
    """Stopped-path marginals at several times plus the stopped position itself."""

    t_evals: np.ndarray
    samples: np.ndarray  # (n_paths, len(t_evals)): X at t ^ tau
    x_tau: np.ndarray  # X at tau ^ horizon
    tau: np.ndarray  # tau ^ horizon
    status: np.ndarray
    horizon: float
    seed: int
    dt: float

    @property
    def n_paths(self) -> int:
        return self.x_tau.size

    def at(self, t: float) -> np.ndarray:
        k = np.flatnonzero(self.t_evals == t)
        if k.size == 0:
            raise KeyError(f"time {t} was not simulated")
        return self.samples[:, k[0]]

    @property
    def censored_rate(self) -> float:
        return float(np.mean(self.status == STATUS_CENSORED))

    @property
    def exit_count(self) -> int:
        return int(np.sum(self.status == STATUS_EXITED))


@dataclass
class EmpiricalLaw:
    samples: np.ndarray
    stop_times: np.ndarray
    seed: int
    dt: float
    n_paths: int
    status: np.ndarray | None = None
    t_eval: float = math.inf

    def __post_init__(self):
        if not (len(self.samples) == len(self.stop_times) == self.n_paths):
            raise ValueError("samples and stop_times must both have n_paths entries")
        if np.any(self.stop_times < 0):
            raise ValueError("stop times must be nonnegative")

    @property
    def unstopped_rate(self) -> float:
        """Fraction of paths still running at the horizon."""
        if self.status is None:
            return 0.0
        return float(np.mean(self.status == STATUS_CENSORED))

    @property
    def exit_count(self) -> int:
        if self.status is None:
            return 0
        return int(np.sum(self.status == STATUS_EXITED))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["path_index", "x_stop", "tau"])
            for i, (x, t) in enumerate(zip(self.samples, self.stop_times)):
                w.writerow([i, repr(float(x)), repr(float(t))])


def read_empirical_csv(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if rows[0] != ["path_index", "x_stop", "tau"]:
        raise ValueError(f"{path}: expected header 'path_index,x_stop,tau'")
    data = np.array([[float(a), float(b)] for _, a, b in rows[1:]])
    return data[:, 0], data[:, 1]


def initial_draws(initial: Measure, seed: int, n_paths: int, offset: int = 0) -> np.ndarray:
    u = uniforms(seed, np.arange(offset, offset + n_paths, dtype=np.uint64))
    return initial.ppf(u)


def simulate_paths(
    spec: DiffusionSpec,
    initial: Measure,
    r: Barrier,
    t_evals=(),
    dt: float = 2.5e-4,
    n_paths: int = 100_000,
    seed: int = 0,
    horizon: float | None = None,
    path_offset: int = 0,
    n_bisect: int = 8,
    threads: int | None = None,
) -> PathEnsemble:
    """Euler paths stopped at the first time t >= r(X_t), up to ``horizon`` (default r.t_cap).

    Paths ``path_offset .. path_offset + n_paths - 1`` are simulated; a path's
    numbers depend only on (seed, path index), so splitting a run into
    several offset calls reproduces it exactly.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    horizon = float(r.t_cap if horizon is None else horizon)
    if not math.isfinite(horizon):
        raise ValueError("simulation horizon must be finite")
    t_evals = np.sort(np.asarray(t_evals, dtype=float))
    if t_evals.size and t_evals[-1] > horizon + 1e-12:
        raise ValueError(f"evaluation time {t_evals[-1]} beyond horizon {horizon}")
    if np.all(r.cells > horizon) and np.all(r.points > horizon):
        warnings.warn("barrier exceeds the horizon everywhere on its grid; paths stop only outside it")
    configure_threads(threads)
    x0 = initial_draws(initial, seed, n_paths, path_offset)
    code, par, tt, tx, tv = spec.packed()
    k0, k1 = split_seed(seed)
    samples = np.empty((n_paths, t_evals.size))
    x_tau = np.empty(n_paths)
    tau = np.empty(n_paths)
    status = np.empty(n_paths, dtype=np.int8)
    _run_paths(
        x0, np.uint64(path_offset), np.uint64(k0), np.uint64(k1),
        code, par, tt, tx, tv,
        np.ascontiguousarray(r.grid), np.ascontiguousarray(r.cells), r.point_values(),
        t_evals, horizon, float(dt), int(n_bisect), float(spec.domain[0]), float(spec.domain[1]),
        samples, x_tau, tau, status,
    )
    ens = PathEnsemble(t_evals, samples, x_tau, tau, status, horizon, int(seed), float(dt))
    if ens.exit_count and math.isfinite(spec.domain[0]) | math.isfinite(spec.domain[1]):
        warnings.warn(f"{ens.exit_count} paths left the domain {spec.domain}")
    return ens


def simulate_stopped(
    spec: DiffusionSpec,
    initial: Measure,
    r: Barrier,
    t_eval: float = math.inf,
    dt: float = 2.5e-4,
    n_paths: int = 100_000,
    seed: int = 0,
    threads: int | None = None,
) -> EmpiricalLaw:
    """Law of X at t_eval ^ tau (t_eval = inf means at tau ^ T_cap)."""
    if t_eval > r.t_cap and math.isfinite(t_eval):
        raise ValueError(f"t_eval {t_eval} exceeds the barrier cap {r.t_cap}")
    if math.isinf(t_eval):
        ens = simulate_paths(spec, initial, r, (), dt, n_paths, seed, threads=threads)
        return EmpiricalLaw(ens.x_tau, ens.tau, int(seed), float(dt), n_paths, ens.status, t_eval)
    ens = simulate_paths(spec, initial, r, (t_eval,), dt, n_paths, seed, horizon=t_eval, threads=threads)
    return EmpiricalLaw(ens.samples[:, 0], ens.tau, int(seed), float(dt), n_paths, ens.status, t_eval)
