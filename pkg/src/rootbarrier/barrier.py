"""Grid-sampled lower semi-continuous barrier functions.

A barrier lives on a sorted grid x_0 < ... < x_N.  Each open cell
(x_i, x_{i+1}) carries one value and each grid point carries a stored
value; evaluating at a grid point returns the minimum of the stored value
and the two adjacent cells, which makes the function lower semi-continuous
by construction.  Outside [x_0, x_N] the barrier is 0.  ``math.inf`` marks
cells that are never reached by the stopping rule.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

INF = math.inf


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float
    closed_lo: bool = False
    closed_hi: bool = False

    @property
    def length(self) -> float:
        return max(0.0, self.hi - self.lo)

    def contains(self, x: float) -> bool:
        above = x >= self.lo if self.closed_lo else x > self.lo
        below = x <= self.hi if self.closed_hi else x < self.hi
        return above and below

    def covers(self, other: "Interval") -> bool:
        lo_ok = self.lo < other.lo or (self.lo == other.lo and (self.closed_lo or not other.closed_lo))
        hi_ok = self.hi > other.hi or (self.hi == other.hi and (self.closed_hi or not other.closed_hi))
        return lo_ok and hi_ok


def total_length(intervals: Iterable[Interval]) -> float:
    return math.fsum(iv.length for iv in intervals)


@dataclass(frozen=True)
class Barrier:
    grid: np.ndarray
    cells: np.ndarray
    points: np.ndarray
    t_cap: float

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        cells = np.asarray(self.cells, dtype=float)
        points = np.asarray(self.points, dtype=float)
        if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0):
            raise ValueError("barrier grid must be strictly increasing with at least two points")
        if cells.shape != (grid.size - 1,) or points.shape != grid.shape:
            raise ValueError("barrier needs one value per cell and one per grid point")
        if np.any(cells < 0) or np.any(points < 0) or np.isnan(cells).any() or np.isnan(points).any():
            raise ValueError("barrier values must be nonnegative")
        for name, arr in (("grid", grid), ("cells", cells), ("points", points)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_nodes(cls, grid, values, t_cap: float) -> "Barrier":
        """Barrier from node samples: each cell takes the larger of its two ends."""
        values = np.asarray(values, dtype=float)
        return cls(grid, np.maximum(values[:-1], values[1:]), values, t_cap)

    @classmethod
    def constant(cls, level: float, lo: float, hi: float, t_cap: float | None = None, n: int = 1) -> "Barrier":
        grid = np.linspace(lo, hi, n + 1)
        cap = level if t_cap is None else t_cap
        return cls(grid, np.full(n, level), np.full(n + 1, level), cap)

    @property
    def span(self) -> tuple[float, float]:
        return float(self.grid[0]), float(self.grid[-1])

    def point_values(self) -> np.ndarray:
        """Lower semi-continuous value at every grid point."""
        out = self.points.copy()
        out[:-1] = np.minimum(out[:-1], self.cells)
        out[1:] = np.minimum(out[1:], self.cells)
        return out

    def __call__(self, x):
        return evaluate(self, x)

    def has_inf(self) -> bool:
        return bool(np.isinf(self.cells).any())


def evaluate(r: Barrier, x):
    """Barrier value at x (scalar or array)."""
    scalar = np.ndim(x) == 0
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.zeros_like(x)
    g = r.grid
    inside = (x >= g[0]) & (x <= g[-1])
    xi = x[inside]
    idx = np.searchsorted(g, xi, side="right") - 1
    idx = np.clip(idx, 0, g.size - 1)
    on_point = g[idx] == xi
    vals = np.where(on_point, r.point_values()[idx], r.cells[np.minimum(idx, r.cells.size - 1)])
    out[inside] = vals
    return float(out[0]) if scalar else out


def region_at_least(r: Barrier, t: float) -> list[Interval]:
    """Maximal intervals inside the grid span where the barrier is >= t."""
    pts = r.point_values()
    # alternate point, cell, point, ..., point
    seq = np.empty(2 * r.grid.size - 1)
    seq[0::2] = pts
    seq[1::2] = r.cells
    ok = seq >= t
    out = []
    k, n = 0, seq.size
    while k < n:
        if not ok[k]:
            k += 1
            continue
        j = k
        while j + 1 < n and ok[j + 1]:
            j += 1
        lo = r.grid[k // 2] if k % 2 == 0 else r.grid[(k - 1) // 2]
        hi = r.grid[j // 2] if j % 2 == 0 else r.grid[(j + 1) // 2]
        out.append(Interval(float(lo), float(hi), closed_lo=k % 2 == 0, closed_hi=j % 2 == 0))
        k = j + 1
    return out


def _refine(r: Barrier, extra: Sequence[float]) -> Barrier:
    """Insert grid points without changing the function."""
    extra = np.asarray([e for e in extra if r.grid[0] < e < r.grid[-1]], dtype=float)
    if extra.size == 0:
        return r
    grid = np.union1d(r.grid, extra)
    mids = 0.5 * (grid[:-1] + grid[1:])
    cells = evaluate(r, mids)
    points = np.where(np.isin(grid, r.grid), 0.0, evaluate(r, grid))
    old = np.searchsorted(grid, r.grid)
    points[old] = r.points
    return Barrier(grid, cells, points, r.t_cap)


def regularize(r: Barrier, intervals: Sequence[tuple[float, float]]) -> Barrier:
    """Set the barrier to 0 outside the union of the given open intervals."""
    ivs = [(float(lo), float(hi)) for lo, hi in intervals]
    r = _refine(r, [v for iv in ivs for v in iv])
    mids = 0.5 * (r.grid[:-1] + r.grid[1:])

    def inside(x):
        x = np.asarray(x)
        hit = np.zeros(x.shape, dtype=bool)
        for lo, hi in ivs:
            hit |= (x > lo) & (x < hi)
        return hit

    cells = np.where(inside(mids), r.cells, 0.0)
    points = np.where(inside(r.grid), r.points, 0.0)
    return Barrier(r.grid, cells, points, r.t_cap)


def paste_barriers(
    base_level: float,
    pieces: Sequence[tuple[tuple[float, float], Barrier]],
    span: tuple[float, float] | None = None,
) -> Barrier:
    """Constant ``base_level`` with ``base_level + piece`` inside each open piece interval."""
    ivs = sorted((((float(lo), float(hi)), b) for (lo, hi), b in pieces), key=lambda item: item[0])
    for ((lo0, hi0), _), ((lo1, hi1), _) in zip(ivs[:-1], ivs[1:]):
        if lo1 < hi0:
            raise ValueError(f"piece intervals ({lo0}, {hi0}) and ({lo1}, {hi1}) overlap")
    knots = []
    for (lo, hi), b in ivs:
        if not lo < hi:
            raise ValueError(f"empty piece interval ({lo}, {hi})")
        knots += [lo, hi]
        knots += [g for g in b.grid if lo < g < hi]
    if span is not None:
        knots += list(span)
    if len(knots) < 2:
        raise ValueError("pasting needs at least one piece or an explicit span")
    grid = np.unique(np.asarray(knots, dtype=float))
    if span is not None:
        grid = grid[(grid >= span[0]) & (grid <= span[1])]
    mids = 0.5 * (grid[:-1] + grid[1:])
    cells = np.full(mids.size, float(base_level))
    points = np.full(grid.size, float(base_level))
    cap = float(base_level)
    for (lo, hi), b in ivs:
        sel = (mids > lo) & (mids < hi)
        cells[sel] = base_level + evaluate(b, mids[sel])
        sel = (grid > lo) & (grid < hi)
        points[sel] = base_level + evaluate(b, grid[sel])
        cap = max(cap, base_level + b.t_cap)
    return Barrier(grid, cells, points, cap)


def continuity_modulus(r: Barrier) -> tuple[float, float]:
    """Largest jump between adjacent cells and the grid point where it sits."""
    c = r.cells
    if c.size < 2:
        return 0.0, float(r.grid[0])
    inf_left, inf_right = np.isinf(c[:-1]), np.isinf(c[1:])
    mixed = np.flatnonzero(inf_left != inf_right)
    if mixed.size:
        return INF, float(r.grid[mixed[0] + 1])
    finite = ~inf_left
    jumps = np.where(finite, np.abs(np.diff(np.where(np.isinf(c), 0.0, c))), 0.0)
    k = int(np.argmax(jumps))
    return float(jumps[k]), float(r.grid[k + 1])


# --- CSV ----------------------------------------------------------------


def _fmt(v: float) -> str:
    return "inf" if math.isinf(v) else repr(float(v))


def write_barrier_csv(r: Barrier, path) -> None:
    """Rows alternate grid point, cell, grid point, ...; a cell row sits at its midpoint.

    Floats are written with ``repr`` so reading back is bit-exact.
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "r"])
        for i, x in enumerate(r.grid):
            w.writerow([_fmt(x), _fmt(r.points[i])])
            if i < r.cells.size:
                w.writerow([_fmt(0.5 * (x + r.grid[i + 1])), _fmt(r.cells[i])])


def read_barrier_csv(path, t_cap: float | None = None) -> Barrier:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["x", "r"]:
        raise ValueError(f"{path}: expected header 'x,r'")
    body = rows[1:]
    if len(body) < 3 or len(body) % 2 == 0:
        raise ValueError(f"{path}: expected an odd number (>= 3) of data rows")
    xs = np.array([float(a) for a, _ in body])
    rs = np.array([float(b) for _, b in body])
    grid, cell_x = xs[0::2], xs[1::2]
    if np.any(cell_x <= grid[:-1]) or np.any(cell_x >= grid[1:]):
        raise ValueError(f"{path}: cell rows must lie strictly between grid rows")
    points, cells = rs[0::2], rs[1::2]
    if t_cap is None:
        finite = rs[np.isfinite(rs)]
        t_cap = float(finite.max()) if finite.size else 0.0
    return Barrier(grid, cells, points, t_cap)
