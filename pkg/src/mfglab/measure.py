"""Probability measures on the real line.

Two concrete representations are used throughout the package: a histogram
of cell masses on a uniform grid (:class:`GridDensity`) and a cloud of
equally weighted atoms (:class:`EmpiricalMeasure`).  The quadratic
Wasserstein distance between any two of them is computed exactly by the
quantile-coupling formula, which in one dimension reduces optimal
transport to an integral of squared quantile differences.

Conventions
-----------
* A GridDensity stores cell *masses*, not density values, so conservation
  checks are exact sums.
* For the Wasserstein distance the mass of a cell is spread uniformly
  over the cell, making the quantile function piecewise linear and the
  distance an exact O(nx) merge.
* :func:`sample` inverts the step CDF at cell centers (one atom value per
  cell).  The two conventions differ by at most dx/sqrt(12); sampling at
  centers is what makes project -> sample -> project contract at the
  Monte-Carlo rate instead of stalling on an O(dx) blur.

All values are immutable after construction and every operation is a pure
function, so they are safe to share across worker threads.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError

__all__ = [
    "SpatialGrid",
    "GridDensity",
    "EmpiricalMeasure",
    "MeasureFlow",
    "wasserstein2",
    "moments",
    "project",
    "sample",
    "shift",
    "gaussian_grid",
]


def _freeze(arr):
    arr = np.ascontiguousarray(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform cell grid on [xmin, xmax] with nx cells.

    Cell i covers [xmin + i*dx, xmin + (i+1)*dx] and has center
    xmin + (i + 1/2)*dx.
    """

    xmin: float
    xmax: float
    nx: int

    def __post_init__(self):
        if not (self.xmax > self.xmin):
            raise ConfigurationError(
                f"grid needs xmax > xmin, got [{self.xmin}, {self.xmax}]")
        if self.nx < 1:
            raise ConfigurationError(f"grid needs nx >= 1, got {self.nx}")

    @property
    def dx(self) -> float:
        return (self.xmax - self.xmin) / self.nx

    @property
    def centers(self) -> np.ndarray:
        return self.xmin + (np.arange(self.nx) + 0.5) * self.dx

    @property
    def edges(self) -> np.ndarray:
        return self.xmin + np.arange(self.nx + 1) * self.dx


class GridDensity:
    """Probability measure as nonnegative cell masses on a SpatialGrid.

    Weights are validated (no entry below -1e-12, total within 1e-10 of
    one), clipped at zero and renormalized, then frozen.
    """

    __slots__ = ("space", "weights")

    def __init__(self, space: SpatialGrid, weights):
        w = np.asarray(weights, dtype=float)
        if w.ndim != 1 or w.size != space.nx:
            raise ConfigurationError(
                f"weights must be a length-{space.nx} vector, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise DomainError("weights contain non-finite entries")
        wmin = float(w.min()) if w.size else 0.0
        if wmin < -1e-12:
            raise DomainError(f"weights dip to {wmin}, below the -1e-12 floor")
        total = float(w.sum())
        if abs(total - 1.0) > 1e-10:
            raise DomainError(f"weights sum to {total}, not 1 within 1e-10")
        w = np.clip(w, 0.0, None)
        w = w / w.sum()
        object.__setattr__(self, "space", space)
        object.__setattr__(self, "weights", _freeze(w))

    def __setattr__(self, name, value):
        raise AttributeError("GridDensity is immutable")

    # -- geometry passthrough ------------------------------------------
    @property
    def xmin(self) -> float:
        return self.space.xmin

    @property
    def xmax(self) -> float:
        return self.space.xmax

    @property
    def nx(self) -> int:
        return self.space.nx

    @property
    def dx(self) -> float:
        return self.space.dx

    @property
    def centers(self) -> np.ndarray:
        return self.space.centers

    def same_grid(self, other: "GridDensity") -> bool:
        return (self.nx == other.nx
                and self.xmin == other.xmin
                and self.xmax == other.xmax)

    @classmethod
    def _from_normalized(cls, space: SpatialGrid, weights) -> "GridDensity":
        # trusted path for cache loads: the weights were produced by an
        # earlier construction, and revalidating would renormalize again
        # and shift the stored bits
        obj = object.__new__(cls)
        object.__setattr__(obj, "space", space)
        object.__setattr__(obj, "weights", _freeze(np.array(weights, dtype=float)))
        return obj

    def to_csv(self, path) -> None:
        """Write rows (x_center, mass) with a header line."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["x_center", "mass"])
            for x, m in zip(self.centers, self.weights):
                writer.writerow([repr(float(x)), repr(float(m))])

    @staticmethod
    def from_csv(path) -> "GridDensity":
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        x, w = rows[:, 0], rows[:, 1]
        if len(x) < 1:
            raise DomainError(f"no density rows in {path}")
        dx = x[1] - x[0] if len(x) > 1 else 1.0
        space = SpatialGrid(float(x[0] - dx / 2), float(x[-1] + dx / 2), len(x))
        return GridDensity(space, w)


class EmpiricalMeasure:
    """Equally weighted atoms; weight 1/N each."""

    __slots__ = ("atoms",)

    def __init__(self, atoms):
        a = np.atleast_1d(np.asarray(atoms, dtype=float))
        if a.ndim != 1 or a.size < 1:
            raise DomainError("need at least one atom")
        if not np.all(np.isfinite(a)):
            raise DomainError("atoms contain non-finite entries")
        object.__setattr__(self, "atoms", _freeze(a))

    def __setattr__(self, name, value):
        raise AttributeError("EmpiricalMeasure is immutable")

    @property
    def n(self) -> int:
        return self.atoms.size

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("atom\n")
            for a in self.atoms:
                fh.write(repr(float(a)) + "\n")

    @staticmethod
    def from_csv(path) -> "EmpiricalMeasure":
        return EmpiricalMeasure(np.loadtxt(path, skiprows=1, ndmin=1))


class MeasureFlow:
    """A time-indexed family of grid densities on a uniform time grid.

    Times must be strictly increasing and uniformly spaced; sub-interval
    flows (starting at s > 0) reuse the same type, so times[0] is not
    forced to zero.
    """

    __slots__ = ("times", "densities")

    def __init__(self, times, densities):
        t = np.asarray(times, dtype=float)
        densities = tuple(densities)
        if t.ndim != 1 or t.size != len(densities):
            raise ConfigurationError(
                f"{t.size} times for {len(densities)} densities")
        if t.size < 2:
            raise ConfigurationError("a flow needs at least two time points")
        dt = np.diff(t)
        if not np.all(dt > 0):
            raise ConfigurationError("times must be strictly increasing")
        if np.max(np.abs(dt - dt[0])) > 1e-9 * max(abs(t[-1]), 1.0):
            raise ConfigurationError("times must be uniformly spaced")
        space = densities[0].space
        for d in densities:
            if not d.same_grid(densities[0]):
                raise ConfigurationError("flow densities live on different grids")
        object.__setattr__(self, "times", _freeze(t))
        object.__setattr__(self, "densities", densities)

    def __setattr__(self, name, value):
        raise AttributeError("MeasureFlow is immutable")

    def __len__(self):
        return len(self.densities)

    def __getitem__(self, k) -> GridDensity:
        return self.densities[k]

    @property
    def nt(self) -> int:
        return len(self.densities) - 1


# ---------------------------------------------------------------------------
# quantile machinery

def _quantile_pieces(m):
    """Linear pieces (p_lo, p_hi, x_lo, x_hi) of the quantile function.

    Grid densities spread each cell's mass uniformly over the cell;
    empirical measures are flat at each sorted atom.  The p-intervals of
    the returned pieces partition [0, 1].
    """
    if isinstance(m, GridDensity):
        w = m.weights
        keep = w > 0.0
        cum = np.concatenate(([0.0], np.cumsum(w)))
        cum[-1] = 1.0  # guard against 1 - 1e-17 style roundoff
        edges = m.space.edges
        p_lo = cum[:-1][keep]
        p_hi = cum[1:][keep]
        x_lo = edges[:-1][keep]
        x_hi = edges[1:][keep]
        # squeeze out roundoff-empty pieces left by the cumsum
        ok = p_hi > p_lo
        return p_lo[ok], p_hi[ok], x_lo[ok], x_hi[ok]
    if isinstance(m, EmpiricalMeasure):
        a = np.sort(m.atoms)
        n = a.size
        p = np.arange(n + 1) / n
        return p[:-1], p[1:], a, a
    raise DomainError(f"not a measure: {type(m).__name__}")


def _quantile_on_segments(pieces, p0, p1, mid):
    """Evaluate the quantile at both ends of merged segments.

    mid identifies the unique piece containing each segment; values at the
    segment ends come from that piece's own linear map so shared
    breakpoints are handled consistently.
    """
    p_lo, p_hi, x_lo, x_hi = pieces
    idx = np.searchsorted(p_lo, mid, side="right") - 1
    idx = np.clip(idx, 0, len(p_lo) - 1)
    span = p_hi[idx] - p_lo[idx]
    slope = (x_hi[idx] - x_lo[idx]) / span
    q0 = x_lo[idx] + (p0 - p_lo[idx]) * slope
    q1 = x_lo[idx] + (p1 - p_lo[idx]) * slope
    return q0, q1


def wasserstein2(a, b) -> float:
    """Exact quadratic Wasserstein distance between two measures.

    Both measures' quantile functions are piecewise linear, so on the
    merged breakpoint partition the squared difference is a quadratic
    integrated in closed form per segment:

        int d(p)^2 dp over [p0, p1]  =  (p1-p0) (d0^2 + d0 d1 + d1^2) / 3.

    Symmetric by construction; zero iff the measures coincide.  Grid
    densities must share a grid; mixed grid/empirical pairs are allowed.
    """
    if isinstance(a, GridDensity) and isinstance(b, GridDensity):
        if not a.same_grid(b):
            raise ConfigurationError(
                "wasserstein2 between grid densities needs a shared grid")
    pa = _quantile_pieces(a)
    pb = _quantile_pieces(b)
    breaks = np.union1d(pa[0], pb[0])
    breaks = np.union1d(breaks, [1.0])
    p0 = breaks[:-1]
    p1 = breaks[1:]
    keep = p1 > p0
    p0, p1 = p0[keep], p1[keep]
    mid = 0.5 * (p0 + p1)
    qa0, qa1 = _quantile_on_segments(pa, p0, p1, mid)
    qb0, qb1 = _quantile_on_segments(pb, p0, p1, mid)
    d0 = qa0 - qb0
    d1 = qa1 - qb1
    total = float(np.sum((p1 - p0) * (d0 * d0 + d0 * d1 + d1 * d1)) / 3.0)
    return math.sqrt(max(total, 0.0))


def moments(m):
    """(mean, variance, second moment); exact for atoms, midpoint rule
    for grid densities."""
    if isinstance(m, GridDensity):
        x = m.centers
        w = m.weights
        mean = float(w @ x)
        second = float(w @ (x * x))
    elif isinstance(m, EmpiricalMeasure):
        a = m.atoms
        mean = float(a.mean())
        second = float(np.mean(a * a))
    else:
        raise DomainError(f"not a measure: {type(m).__name__}")
    var = max(second - mean * mean, 0.0)
    return mean, var, second


def mean_of(m) -> float:
    """Mean of a measure, or passthrough for a bare real."""
    if isinstance(m, (int, float, np.floating)):
        return float(m)
    return moments(m)[0]


def project(e: EmpiricalMeasure, space: SpatialGrid) -> GridDensity:
    """Cloud-in-cell deposit of atoms onto the grid.

    Each atom splits its 1/N mass linearly between the two nearest cell
    centers.  Atoms outside [xmin, xmax] are clamped into the end cells
    and counted; if every atom is outside, that is a domain error.
    """
    a = e.atoms
    inside = (a >= space.xmin) & (a <= space.xmax)
    n_clamped = int(np.sum(~inside))
    if n_clamped == a.size:
        raise DomainError("all atoms fall outside the grid domain")
    if n_clamped:
        import warnings

        warnings.warn(f"project: clamped {n_clamped} atom(s) into the domain",
                      stacklevel=2)
    # position in center-index coordinates
    s = (a - space.xmin) / space.dx - 0.5
    i0 = np.floor(s).astype(int)
    frac = s - i0
    lo = np.clip(i0, 0, space.nx - 1)
    hi = np.clip(i0 + 1, 0, space.nx - 1)
    w = np.zeros(space.nx)
    np.add.at(w, lo, (1.0 - frac) / a.size)
    np.add.at(w, hi, frac / a.size)
    # atoms left of the first center or right of the last: all mass to the end cell
    return GridDensity(space, w)


def sample(d: GridDensity, n: int, rng_stream) -> EmpiricalMeasure:
    """Inverse-CDF sample of n atoms, one atom value per cell center.

    rng_stream may be an integer seed, a SeedSequence, or a Generator;
    the same stream always yields the same atoms.
    """
    if n < 1:
        raise DomainError(f"need n >= 1 atoms, got {n}")
    rng = np.random.default_rng(rng_stream)
    p = rng.random(n)
    cum = np.cumsum(d.weights)
    cum[-1] = 1.0
    idx = np.searchsorted(cum, p, side="right")
    idx = np.clip(idx, 0, d.nx - 1)
    return EmpiricalMeasure(d.centers[idx])


def shift(d: GridDensity, dx_shift: float) -> GridDensity:
    """Translate the density by dx_shift with linear mass redistribution.

    Mass pushed past the boundary accumulates in the end cells, so the
    total is conserved exactly.  A zero shift is an exact identity
    (bit-for-bit), which the degenerate-tree checks rely on.
    """
    if not abs(dx_shift) < (d.xmax - d.xmin) / 2:
        raise DomainError(
            f"shift {dx_shift} exceeds half the domain width")
    r = dx_shift / d.dx
    j = math.floor(r)
    frac = r - j
    w = d.weights
    nx = d.nx
    idx = np.arange(nx)
    out = np.zeros(nx)
    np.add.at(out, np.clip(idx + j, 0, nx - 1), w * (1.0 - frac))
    if frac != 0.0:
        np.add.at(out, np.clip(idx + j + 1, 0, nx - 1), w * frac)
    return GridDensity(d.space, out)


def gaussian_grid(mean: float, std: float, space: SpatialGrid) -> GridDensity:
    """Gaussian law projected on the grid by exact cell-mass integration.

    Tail mass beyond the domain is folded into the end cells so the
    weights sum to one exactly.
    """
    if std <= 0:
        raise DomainError(f"need std > 0, got {std}")
    from scipy.special import ndtr

    z = (space.edges - mean) / std
    cdf = ndtr(z)
    w = np.diff(cdf)
    w[0] += cdf[0]
    w[-1] += 1.0 - cdf[-1]
    return GridDensity(space, w)


def flow_csv(flow: MeasureFlow) -> str:
    """Flow serialized as CSV rows (t, x_center, mass)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t", "x_center", "mass"])
    for t, d in zip(flow.times, flow.densities):
        for x, m in zip(d.centers, d.weights):
            writer.writerow([repr(float(t)), repr(float(x)), repr(float(m))])
    return buf.getvalue()
