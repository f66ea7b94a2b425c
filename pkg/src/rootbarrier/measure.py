"""Finite measures on the line made of atoms and piecewise-polynomial densities.

Densities are stored piece by piece in local coordinates: on ``[a, b)`` the
density is ``sum_k c[k] * (x - a)**k``.  Everything the rest of the package
needs (mass, first moment, potential, cdf) is computed in closed form from
those coefficients, so convex-order comparisons carry no quadrature noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.special import comb
from scipy.stats import norm

MAX_DEGREE = 3
TOTAL_TOL = 1e-12


class MeasureError(ValueError):
    """Raised when a measure cannot be constructed or violates an invariant."""


class MeanMismatchError(ValueError):
    """Raised when two measures compared for convex order have different means."""


@dataclass(frozen=True)
class Piece:
    a: float
    b: float
    coeffs: tuple[float, ...]

    @property
    def width(self) -> float:
        return self.b - self.a

    def poly(self) -> np.ndarray:
        return np.asarray(self.coeffs, dtype=float)

    def density(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= self.a) & (x < self.b)
        return np.where(inside, P.polyval(x - self.a, self.poly()), 0.0)

    def mass_between(self, lo: float, hi: float) -> float:
        lo, hi = max(lo, self.a), min(hi, self.b)
        if hi <= lo:
            return 0.0
        anti = P.polyint(self.poly())
        return float(P.polyval(hi - self.a, anti) - P.polyval(lo - self.a, anti))

    def moment_between(self, lo: float, hi: float) -> float:
        lo, hi = max(lo, self.a), min(hi, self.b)
        if hi <= lo:
            return 0.0
        # integral of y f(y) = integral of (s + a) f, s = y - a
        c = self.poly()
        anti = P.polyint(P.polyadd(P.polymulx(c), self.a * c))
        return float(P.polyval(hi - self.a, anti) - P.polyval(lo - self.a, anti))


def _shift(coeffs: np.ndarray, delta: float) -> np.ndarray:
    """Re-express sum c_k s**k in the variable s' = s - delta."""
    n = len(coeffs)
    out = np.zeros(n)
    for j in range(n):
        k = np.arange(j, n)
        out[j] = np.sum(coeffs[j:] * comb(k, j) * delta ** (k - j))
    return out


def _trim(coeffs: np.ndarray) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=float)
    nz = np.flatnonzero(coeffs)
    if nz.size == 0:
        return coeffs[:1] * 0.0
    return coeffs[: nz[-1] + 1]


@dataclass(frozen=True)
class Measure:
    """Atoms plus disjoint polynomial density pieces.

    ``declared_total`` defaults to the computed total; when given it must
    match the computed mass within ``TOTAL_TOL``.
    """

    atoms: tuple[tuple[float, float], ...] = ()
    pieces: tuple[Piece, ...] = ()
    declared_total: float | None = None
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        atoms = tuple(sorted((float(x), float(w)) for x, w in self.atoms if w != 0.0))
        pieces = tuple(sorted(self.pieces, key=lambda p: p.a))
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "pieces", pieces)
        for x, w in atoms:
            if not math.isfinite(x) or w < 0 or not math.isfinite(w):
                raise MeasureError(f"invalid atom ({x}, {w})")
        prev_b = -math.inf
        for p in pieces:
            if not (math.isfinite(p.a) and math.isfinite(p.b)) or p.b <= p.a:
                raise MeasureError(f"piece [{p.a}, {p.b}) must be bounded and nonempty")
            if len(p.coeffs) - 1 > MAX_DEGREE:
                raise MeasureError(f"piece [{p.a}, {p.b}) has degree > {MAX_DEGREE}")
            if p.a < prev_b:
                raise MeasureError(f"piece [{p.a}, {p.b}) overlaps its predecessor")
            prev_b = p.b
            _check_nonnegative(p)
        total = self.total
        if self.declared_total is None:
            object.__setattr__(self, "declared_total", total)
        elif abs(total - self.declared_total) > TOTAL_TOL:
            raise MeasureError(
                f"computed total {total!r} differs from declared {self.declared_total!r}"
            )

    # --- basic statistics -------------------------------------------------

    @property
    def total(self) -> float:
        if "total" not in self._cache:
            s = math.fsum(w for _, w in self.atoms)
            s += math.fsum(p.mass_between(p.a, p.b) for p in self.pieces)
            self._cache["total"] = s
        return self._cache["total"]

    @property
    def mean(self) -> float:
        if "mean" not in self._cache:
            m = math.fsum(x * w for x, w in self.atoms)
            m += math.fsum(p.moment_between(p.a, p.b) for p in self.pieces)
            self._cache["mean"] = m / self.total
        return self._cache["mean"]

    @property
    def support(self) -> tuple[float, float]:
        locs = [x for x, _ in self.atoms] + [p.a for p in self.pieces] + [p.b for p in self.pieces]
        if not locs:
            raise MeasureError("empty measure has no support")
        return min(locs), max(locs)

    @property
    def has_atoms(self) -> bool:
        return bool(self.atoms)

    def is_probability(self) -> bool:
        return abs(self.total - 1.0) <= TOTAL_TOL

    def mass(self, lo: float, hi: float) -> float:
        """Mass of the open interval (lo, hi)."""
        if hi <= lo:
            return 0.0
        s = math.fsum(w for x, w in self.atoms if lo < x < hi)
        s += math.fsum(p.mass_between(lo, hi) for p in self.pieces if p.b > lo and p.a < hi)
        return s

    def mass_halfopen(self, lo: float, hi: float) -> float:
        """Mass of [lo, hi)."""
        s = self.mass(lo, hi)
        return s + math.fsum(w for x, w in self.atoms if x == lo)

    def moment_halfopen(self, lo: float, hi: float) -> float:
        """First moment over [lo, hi)."""
        s = math.fsum(x * w for x, w in self.atoms if lo <= x < hi)
        s += math.fsum(p.moment_between(lo, hi) for p in self.pieces if p.b > lo and p.a < hi)
        return s

    def atom_at(self, x: float, tol: float = 1e-12) -> float:
        return math.fsum(w for y, w in self.atoms if abs(y - x) <= tol)

    def density(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for p in self.pieces:
            out = out + p.density(x)
        return out

    def min_density_on(self, lo: float, hi: float, n: int = 64) -> float:
        """Minimum density over the open interval (lo, hi), sampled per piece.

        Uncovered stretches count as zero density.
        """
        covered = lo
        best = math.inf
        for p in self.pieces:
            if p.b <= lo or p.a >= hi:
                continue
            if p.a > covered:
                return 0.0
            a, b = max(p.a, lo), min(p.b, hi)
            s = np.linspace(a, b, n + 1)
            cheb = 0.5 * (a + b) + 0.5 * (b - a) * np.cos(np.pi * (np.arange(n) + 0.5) / n)
            pts = np.concatenate([s, cheb])
            pts = pts[(pts > lo) & (pts < hi)]
            if pts.size:
                best = min(best, float(P.polyval(pts - p.a, p.poly()).min()))
            covered = max(covered, p.b)
        if covered < hi:
            return 0.0
        return best

    # --- potential and cdf ------------------------------------------------

    def potential(self, x):
        """u(x) = -integral |x - y| dm(y), exact for atoms and pieces."""
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for loc, w in self.atoms:
            out -= w * np.abs(x - loc)
        for p in self.pieces:
            out -= _piece_abs_moment(p, x)
        return out

    def cdf(self, x):
        """m((-inf, x])."""
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for loc, w in self.atoms:
            out += np.where(x >= loc, w, 0.0)
        for p in self.pieces:
            anti = P.polyint(p.poly())
            z = np.clip(x, p.a, p.b) - p.a
            out += P.polyval(z, anti)
        return out

    def ppf(self, u):
        """Generalized inverse of the normalized cdf, vectorized."""
        u = np.asarray(u, dtype=float) * self.total
        events = [(loc, 0, w, None) for loc, w in self.atoms]
        events += [(p.a, 1, p.mass_between(p.a, p.b), p) for p in self.pieces]
        events.sort(key=lambda e: (e[0], e[1]))
        cum = np.cumsum([e[2] for e in events])
        idx = np.searchsorted(cum, u, side="left")
        idx = np.minimum(idx, len(events) - 1)
        out = np.empty_like(u)
        before = np.concatenate([[0.0], cum[:-1]])
        for k in np.unique(idx):
            sel = idx == k
            loc, kind, _, piece = events[k]
            if kind == 0:
                out[sel] = loc
                continue
            target = u[sel] - before[k]
            anti = P.polyint(piece.poly())
            lo = np.zeros(target.shape)
            hi = np.full(target.shape, piece.width)
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                below = P.polyval(mid, anti) < target
                lo = np.where(below, mid, lo)
                hi = np.where(below, hi, mid)
            out[sel] = piece.a + 0.5 * (lo + hi)
        return out

    # --- algebra ----------------------------------------------------------

    def scaled(self, w: float) -> "Measure":
        if w < 0:
            raise MeasureError("scale factor must be nonnegative")
        return Measure(
            atoms=tuple((x, w * m) for x, m in self.atoms),
            pieces=tuple(Piece(p.a, p.b, tuple(w * c for c in p.coeffs)) for p in self.pieces),
        )

    def normalized(self) -> "Measure":
        return self.scaled(1.0 / self.total)

    def restricted(self, lo: float, hi: float) -> "Measure":
        """Restriction to the open interval (lo, hi); infinite ends allowed."""
        atoms = tuple((x, w) for x, w in self.atoms if lo < x < hi)
        pieces = []
        for p in self.pieces:
            a, b = max(p.a, lo), min(p.b, hi)
            if b <= a:
                continue
            pieces.append(Piece(a, b, tuple(_shift(p.poly(), a - p.a))))
        return Measure(atoms=atoms, pieces=tuple(pieces))

    def __add__(self, other: "Measure") -> "Measure":
        return measure_sum([self, other])


def _check_nonnegative(p: Piece) -> None:
    c = p.poly()
    n = 8
    cheb = 0.5 * p.width * (1 + np.cos(np.pi * (np.arange(n) + 0.5) / n))
    pts = np.concatenate([[0.0, p.width], cheb])
    vals = P.polyval(pts, c)
    scale = max(1.0, float(np.max(np.abs(vals))))
    if vals.min() < -1e-12 * scale:
        raise MeasureError(f"negative density on piece [{p.a}, {p.b})")


def _piece_abs_moment(p: Piece, x: np.ndarray) -> np.ndarray:
    """integral over the piece of |x - y| f(y) dy, in closed form."""
    c = p.poly()
    m0 = P.polyint(c)
    m1 = P.polyint(P.polymulx(c))
    L = p.width
    xs = x - p.a
    z = np.clip(xs, 0.0, L)
    return 2.0 * (xs * P.polyval(z, m0) - P.polyval(z, m1)) + P.polyval(L, m1) - xs * P.polyval(L, m0)


def measure_sum(measures: Iterable[Measure]) -> Measure:
    """Sum of measures; overlapping pieces are split at all breakpoints and added."""
    measures = list(measures)
    atoms: dict[float, float] = {}
    for m in measures:
        for x, w in m.atoms:
            atoms[x] = atoms.get(x, 0.0) + w
    all_pieces = [p for m in measures for p in m.pieces]
    if not all_pieces:
        return Measure(atoms=tuple(atoms.items()))
    cuts = np.unique(np.array([v for p in all_pieces for v in (p.a, p.b)]))
    pieces = []
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        acc = np.zeros(MAX_DEGREE + 1)
        hit = False
        for p in all_pieces:
            if p.a <= lo and hi <= p.b:
                c = _shift(p.poly(), lo - p.a)
                acc[: len(c)] += c
                hit = True
        if hit and np.any(acc != 0.0):
            pieces.append(Piece(float(lo), float(hi), tuple(_trim(acc))))
    return Measure(atoms=tuple(atoms.items()), pieces=tuple(pieces))


# --- named constructors ---------------------------------------------------


def dirac(loc: float, mass: float = 1.0) -> Measure:
    return Measure(atoms=((loc, mass),))


def discrete(locs: Sequence[float], masses: Sequence[float]) -> Measure:
    return measure_sum([dirac(x, w) for x, w in zip(locs, masses)])


def uniform(a: float, b: float) -> Measure:
    if not b > a:
        raise MeasureError("uniform needs a < b")
    return Measure(pieces=(Piece(a, b, (1.0 / (b - a),)),))


def gaussian(mean: float = 0.0, var: float = 1.0, n_pieces: int = 512, width: float = 8.0) -> Measure:
    """Cubic Hermite spline of the normal density on mean +- width * sd.

    The tail mass beyond the cut is folded into the two outermost pieces and
    the spline is then renormalized to unit mass, absorbing the (order
    h**4) interpolation error.
    """
    if var <= 0:
        raise MeasureError("gaussian needs var > 0")
    if n_pieces % 2:
        raise MeasureError("n_pieces must be even to keep the spline symmetric")
    sd = math.sqrt(var)
    z = np.linspace(-width, width, n_pieces + 1)
    z = 0.5 * (z - z[::-1])  # exact mirror symmetry
    f = norm.pdf(z)
    df = -z * f
    h = z[1] - z[0]
    c0, c1 = f[:-1], df[:-1]
    slope = (f[1:] - f[:-1]) / h
    c2 = (3 * slope - 2 * df[:-1] - df[1:]) / h
    c3 = (df[:-1] + df[1:] - 2 * slope) / h**2
    coeffs = np.stack([c0, c1, c2, c3], axis=1)
    tail = norm.sf(width)
    coeffs[0, 0] += tail / h
    coeffs[-1, 0] += tail / h
    integral = np.sum(coeffs[:, 0] * h + coeffs[:, 1] * h**2 / 2 + coeffs[:, 2] * h**3 / 3 + coeffs[:, 3] * h**4 / 4)
    coeffs /= integral
    # change of variables x = mean + sd * z
    scale = np.array([1.0, 1.0 / sd, 1.0 / sd**2, 1.0 / sd**3]) / sd
    pieces = tuple(
        Piece(float(mean + sd * z[i]), float(mean + sd * z[i + 1]), tuple(coeffs[i] * scale))
        for i in range(n_pieces)
    )
    return Measure(pieces=pieces)


def tent_density(lam: float, p: float, a: float, b: float, x):
    """Two-triangle density: mass 1-lam piled at a, mass lam piled at b."""
    _check_tent(lam, p, a, b)
    x = np.asarray(x, dtype=float)
    left = (1 - lam) * 2 * (a + p - x) / p**2 * (x < a + p)
    right = lam * 2 * (x - b + p) / p**2 * (x > b - p)
    return np.where((x > a) & (x < b), left + right, 0.0)


def _check_tent(lam: float, p: float, a: float, b: float) -> None:
    if not a < b:
        raise MeasureError("tent needs a < b")
    if not 0.0 <= lam <= 1.0:
        raise MeasureError(f"tent weight {lam} outside [0, 1]")
    if not 0 < p <= (b - a) / 2:
        raise MeasureError(f"tent width {p} must lie in (0, (b-a)/2]")


def tent(a: float, b: float, lam: float, p: float, mass: float = 1.0) -> Measure:
    _check_tent(lam, p, a, b)
    pieces = []
    # build each triangle on its floating-point width so it vanishes exactly at the inner end
    if lam < 1:
        w, h = mass * (1 - lam), (a + p) - a
        pieces.append(Piece(a, a + p, (2 * w / h, -2 * w / h**2)))
    if lam > 0:
        w, h = mass * lam, b - (b - p)
        pieces.append(Piece(b - p, b, (0.0, 2 * w / h**2)))
    if len(pieces) == 2 and pieces[0].b > pieces[1].a:
        return measure_sum([Measure(pieces=(pieces[0],)), Measure(pieces=(pieces[1],))])
    return Measure(pieces=tuple(pieces))


def tent_mean(a: float, b: float, lam: float, p: float) -> float:
    return a + p / 3 + lam * ((b - a) - 2 * p / 3)


def calibrate_tent(a: float, b: float, c: float) -> tuple[float, float]:
    """Weight and width of the two-tent law on (a, b) with mean c.

    The width is (b-a)/8 unless c sits within (b-a)/12 of an edge; there it
    shrinks to 1.5 times the distance to that edge so the weight stays in
    (0, 1).
    """
    if not a < c < b:
        raise MeasureError(f"target mean {c} outside ({a}, {b})")
    p = min((b - a) / 8, 1.5 * min(c - a, b - c))
    lo, hi = a + p / 3, b - p / 3
    assert lo < c < hi, "mean not bracketed by the extreme tents"
    lam = (c - a - p / 3) / ((b - a) - 2 * p / 3)
    return lam, p


def mixture_measure(nu: Measure, a: float, b: float, n_cells: int = 64) -> Measure:
    """Integral of the calibrated tent laws xi_c against nu, with nu binned into cells."""
    if nu.mass(-math.inf, a) + nu.atom_at(a) + nu.atom_at(b) + nu.mass(b, math.inf) > 0:
        raise MeasureError(f"mixture base measure must live in ({a}, {b})")
    edges = np.linspace(a, b, n_cells + 1)
    parts = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        w = nu.mass_halfopen(lo, hi)
        if w <= 0:
            continue
        c = nu.moment_halfopen(lo, hi) / w
        lam, p = calibrate_tent(a, b, c)
        parts.append(tent(a, b, lam, p, mass=w))
    return measure_sum(parts)


# --- potential curves and convex order ------------------------------------


@dataclass(frozen=True)
class PotentialCurve:
    grid: np.ndarray
    values: np.ndarray
    mean: float

    def second_differences(self) -> np.ndarray:
        g, v = self.grid, self.values
        left = (v[1:-1] - v[:-2]) / (g[1:-1] - g[:-2])
        right = (v[2:] - v[1:-1]) / (g[2:] - g[1:-1])
        return right - left


def potential_curve(m: Measure, grid) -> PotentialCurve:
    grid = np.asarray(grid, dtype=float)
    return PotentialCurve(grid=grid, values=m.potential(grid), mean=m.mean)


def potential(m: Measure, x):
    return m.potential(x)


def _check_means(m0: Measure, m1: Measure) -> None:
    if abs(m0.mean - m1.mean) > 1e-9:
        raise MeanMismatchError(f"means differ: {m0.mean!r} vs {m1.mean!r}")


def convex_order(m0: Measure, m1: Measure, grid, tol: float = 1e-10) -> tuple[bool, float | None]:
    """Whether u_{m0} >= u_{m1} on the grid.

    On failure the witness is the grid point of largest violation.
    """
    _check_means(m0, m1)
    grid = np.asarray(grid, dtype=float)
    excess = m1.potential(grid) - m0.potential(grid)
    if np.any(excess > tol):
        return False, float(grid[np.argmax(excess)])
    return True, None


def embedding_interval(m0: Measure, m1: Measure, grid, tol: float = 1e-10) -> list[tuple[float, float]]:
    """Maximal open grid intervals on which the potential gap exceeds tol."""
    grid = np.asarray(grid, dtype=float)
    gap = m0.potential(grid) - m1.potential(grid)
    return _runs_above(grid, gap, tol)


def _runs_above(grid: np.ndarray, gap: np.ndarray, tol: float) -> list[tuple[float, float]]:
    above = gap > tol
    out = []
    i, n = 0, len(grid)
    while i < n:
        if not above[i]:
            i += 1
            continue
        j = i
        while j + 1 < n and above[j + 1]:
            j += 1
        lo = grid[i - 1] if i > 0 else grid[0]
        hi = grid[j + 1] if j + 1 < n else grid[-1]
        out.append((float(lo), float(hi)))
        i = j + 1
    return out
