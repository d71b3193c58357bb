"""Baseline game solver: coupled backward value / forward density system.

The population interacts only through the terminal cost, so one sweep of
the map m -> (backward value solve against m_T) -> (forward density push
under the induced feedback) defines the fixed-point iteration.  Damped
Picard updates with a sup-over-time Wasserstein residual drive it to
tolerance.

The same machinery solves the game restricted to [s, T] from an
arbitrary start measure (a "sub-game"), which is how the decoupling
field x -> U(s, x, m) is evaluated at measure arguments away from the
equilibrium flow, and how its measure derivative is probed by central
finite differences.

Scheme notes, load-bearing for the accuracy targets downstream:

* backward step: the squared-gradient flow term is explicit (central
  differences, one-sided second-order at the walls), diffusion is an
  implicit solve.  The implicit operator closes the boundary rows by
  quadratic extrapolation of the ghost value, so the whole spatial
  operator is exact on quadratics and the affine-feedback benchmark
  carries no spatial error from the value solve.
* forward step: conservative upwind transport and diffusion are both
  implicit in one tridiagonal system whose columns sum to one (exact
  conservation) and whose sign pattern is an M-matrix (positivity,
  unconditional stability).
* the explicit gradient term still has an advective stability limit,
  dt * v^2 / (2 nu) <~ 1 by von Neumann analysis; a guard rejects
  configurations an order of magnitude past it and suggests a step
  count, using the worst terminal-cost slope over the domain as the
  velocity estimate (conservative: the bulk of the mass sees much less).

The per-step kernels (hjb_step, fp_step, zero_drift_flow) are shared
with the common-noise tree solver, which is what makes its zero-noise
degenerate run reproduce this solver bit for bit.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import solve_banded

from .errors import ConfigurationError, ConvergenceError, DomainError
from .measure import (
    EmpiricalMeasure,
    GridDensity,
    MeasureFlow,
    SpatialGrid,
    moments,
    project,
    wasserstein2,
)
from .model import ModelSpec

__all__ = [
    "SpaceTimeGrid",
    "FixedPointConfig",
    "Mfg0Solution",
    "solve_mfg0",
    "solve_subgame",
    "measure_derivative_direction",
    "spatial_gradient",
    "hjb_step",
    "fp_step",
    "zero_drift_flow",
    "solution_csv",
    "save_solution",
    "load_solution",
]


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Uniform lattice: nx cells on [xmin, xmax], nt steps from t0 to horizon.

    t0 is 0 for a full solve and the start time for sub-games.
    """

    xmin: float
    xmax: float
    nx: int
    nt: int
    horizon: float
    t0: float = 0.0

    def __post_init__(self):
        problems = []
        if not self.xmax > self.xmin:
            problems.append(f"xmax {self.xmax} must exceed xmin {self.xmin}")
        if self.nx < 8:
            problems.append(f"nx must be >= 8, got {self.nx}")
        if self.nt < 2:
            problems.append(f"nt must be >= 2, got {self.nt}")
        if not self.t0 >= 0:
            problems.append(f"t0 must be >= 0, got {self.t0}")
        if not self.horizon > self.t0:
            problems.append(
                f"horizon {self.horizon} must exceed start time {self.t0}")
        if problems:
            raise ConfigurationError("bad grid: " + "; ".join(problems),
                                     problems=problems)

    @property
    def space(self) -> SpatialGrid:
        return SpatialGrid(self.xmin, self.xmax, self.nx)

    @property
    def times(self) -> np.ndarray:
        return np.linspace(self.t0, self.horizon, self.nt + 1)

    @property
    def dt(self) -> float:
        return (self.horizon - self.t0) / self.nt


@dataclass(frozen=True)
class FixedPointConfig:
    """Damped Picard settings.  Damping is insurance, not a proven rate."""

    damping: float = 0.5
    tol: float = 1e-8
    max_iters: int = 200

    def __post_init__(self):
        problems = []
        if not 0.0 < self.damping <= 1.0:
            problems.append(f"damping must be in (0, 1], got {self.damping}")
        if not self.tol > 0:
            problems.append(f"tol must be > 0, got {self.tol}")
        if self.max_iters < 1:
            problems.append(f"max_iters must be >= 1, got {self.max_iters}")
        if problems:
            raise ConfigurationError(
                "bad fixed-point config: " + "; ".join(problems),
                problems=problems)


# ---------------------------------------------------------------------------
# per-step kernels (shared with the common-noise tree solver)


def spatial_gradient(u, dx: float) -> np.ndarray:
    """Second-order x-derivative along the last axis.

    Central in the interior, one-sided three-point at the walls; every
    stencil is exact on quadratics.
    """
    u = np.asarray(u, dtype=float)
    g = np.empty_like(u)
    g[..., 1:-1] = (u[..., 2:] - u[..., :-2]) / (2.0 * dx)
    g[..., 0] = (-3.0 * u[..., 0] + 4.0 * u[..., 1] - u[..., 2]) / (2.0 * dx)
    g[..., -1] = (3.0 * u[..., -1] - 4.0 * u[..., -2] + u[..., -3]) / (2.0 * dx)
    return g


@lru_cache(maxsize=64)
def _diffusion_bands(nx: int, mu: float):
    # banded form of I - mu*dx^2*D2 ... i.e. I - (dt nu / dx^2)-scaled
    # second difference, boundary rows closed by quadratic extrapolation
    # of the ghost value: row 0 reads (u0 - 2 u1 + u2), exact on quadratics
    ab = np.zeros((5, nx))
    ab[2, :] = 1.0 + 2.0 * mu
    ab[2, 0] = ab[2, -1] = 1.0 - mu
    ab[1, 1:] = -mu
    ab[1, 1] = 2.0 * mu
    ab[0, 2] = -mu
    ab[3, :-1] = -mu
    ab[3, -2] = 2.0 * mu
    ab[4, -3] = -mu
    ab.setflags(write=False)
    return ab


def _second_difference(u, dx: float) -> np.ndarray:
    # same stencil family as the implicit matrix: central in the interior,
    # ghost closure by quadratic extrapolation at the walls
    d = np.empty_like(u)
    inv = 1.0 / (dx * dx)
    d[1:-1] = (u[:-2] - 2.0 * u[1:-1] + u[2:]) * inv
    d[0] = (u[0] - 2.0 * u[1] + u[2]) * inv
    d[-1] = (u[-1] - 2.0 * u[-2] + u[-3]) * inv
    return d


def hjb_step(u_next, dt: float, nu: float, dx: float) -> np.ndarray:
    """One backward value step, second order in time.

    Midpoint predictor (squared-gradient term explicit, diffusion
    implicit over half a step), then a Crank-Nicolson corrector with the
    gradient term evaluated at the midpoint.  Both stages are exact on
    quadratic value slices, so the linear-quadratic benchmark sees no
    spatial error from this kernel.
    """
    half = 0.5 * dt
    bands = _diffusion_bands(u_next.shape[-1], half * nu / (dx * dx))
    p = spatial_gradient(u_next, dx)
    mid = solve_banded((2, 2), bands, u_next - half * (0.5 * p * p))
    pm = spatial_gradient(mid, dx)
    rhs = (u_next + half * nu * _second_difference(u_next, dx)
           - dt * (0.5 * pm * pm))
    return solve_banded((2, 2), bands, rhs)


def fp_step(weights, velocity, dt: float, nu: float, dx: float) -> np.ndarray:
    """One forward density step under a grid velocity field.

    Upwind transport and diffusion are both implicit; zero-flux walls.
    Columns of the system matrix sum to one, so total mass is conserved
    to roundoff, and the M-matrix sign pattern keeps weights >= 0.
    """
    wf = 0.5 * (velocity[:-1] + velocity[1:])  # face velocities
    wp = np.maximum(wf, 0.0)
    wm = np.minimum(wf, 0.0)
    beta = nu / dx
    r = dt / dx
    n = weights.shape[0]
    ab = np.zeros((3, n))
    ab[1, :] = 1.0
    ab[1, :-1] += r * (wp + beta)
    ab[1, 1:] += r * (beta - wm)
    ab[0, 1:] = r * (wm - beta)
    ab[2, :-1] = -r * (wp + beta)
    return solve_banded((1, 1), ab, weights)


def zero_drift_flow(w0, nt: int, dt: float, nu: float, dx: float) -> np.ndarray:
    """Density rows under pure diffusion: the Picard initial guess."""
    rows = np.empty((nt + 1, w0.shape[0]))
    rows[0] = w0
    still = np.zeros_like(w0)
    for k in range(nt):
        rows[k + 1] = fp_step(rows[k], still, dt, nu, dx)
    return rows


# ---------------------------------------------------------------------------
# fixed point


def _stability_guard(model: ModelSpec, grid: SpaceTimeGrid, nu: float,
                     m0_mean: float) -> None:
    vbar = float(np.max(np.abs(model.cost.gx(grid.space.centers, m0_mean))))
    if vbar == 0.0:
        return
    ratio = vbar * vbar * grid.dt / (2.0 * nu)
    if ratio > 8.0:
        span = grid.horizon - grid.t0
        nt_min = int(np.ceil(span * vbar * vbar / (16.0 * nu)))
        raise ConfigurationError(
            f"explicit gradient term unstable: dt*v^2/(2 nu) = {ratio:.2f} "
            f"with worst slope {vbar:.2f}; use nt >= {nt_min}")


def _backward(model: ModelSpec, grid: SpaceTimeGrid, terminal_density,
              nu: float):
    space = grid.space
    u = np.empty((grid.nt + 1, space.nx))
    u[grid.nt] = model.cost.g(space.centers, terminal_density)
    for k in range(grid.nt - 1, -1, -1):
        u[k] = hjb_step(u[k + 1], grid.dt, nu, space.dx)
    return u, spatial_gradient(u, space.dx)


def _forward(w0, ufield, nt: int, dt: float, nu: float, dx: float):
    rows = np.empty((nt + 1, w0.shape[0]))
    rows[0] = w0
    for k in range(nt):
        rows[k + 1] = fp_step(rows[k], -ufield[k], dt, nu, dx)
    return rows


@dataclass(frozen=True)
class Mfg0Solution:
    """Converged equilibrium of the baseline game on a space-time lattice.

    u is the value on the lattice, flow the population law per time node,
    ufield the x-derivative of u (the optimal feedback is its negative)
    and gamma the second x-derivative.
    """

    grid: SpaceTimeGrid
    u: np.ndarray
    flow: MeasureFlow
    ufield: np.ndarray
    gamma: np.ndarray
    residual_history: np.ndarray

    def _interp(self, arr, t, x):
        times = self.grid.times
        t = float(t)
        if not times[0] - 1e-12 <= t <= times[-1] + 1e-12:
            raise DomainError(f"t = {t} outside [{times[0]}, {times[-1]}]")
        s = (t - times[0]) / self.grid.dt
        k = int(np.clip(np.floor(s), 0, self.grid.nt - 1))
        frac = s - k
        row = (1.0 - frac) * arr[k] + frac * arr[k + 1]
        return np.interp(x, self.grid.space.centers, row)

    def ufield_at(self, t, x):
        """Bilinear interpolation of the derivative field; clamps beyond
        the outermost cell centers."""
        return self._interp(self.ufield, t, x)

    def gamma_at(self, t, x):
        return self._interp(self.gamma, t, x)

    def mean_path(self) -> np.ndarray:
        return np.array([moments(d)[0] for d in self.flow.densities])


def _solve_on(model: ModelSpec, w0, grid: SpaceTimeGrid,
              fp: FixedPointConfig) -> Mfg0Solution:
    space = grid.space
    dx, dt = space.dx, grid.dt
    nu = 0.5 * model.sigma * model.sigma
    m0_mean = float(np.dot(w0, space.centers))
    _stability_guard(model, grid, nu, m0_mean)

    rows = zero_drift_flow(w0, grid.nt, dt, nu, dx)
    worst_edge = float(np.max(rows[:, 0] + rows[:, -1]))
    if worst_edge > 1e-8:
        raise ConfigurationError(
            f"domain too narrow: diffusion alone parks {worst_edge:.2e} "
            "mass in the wall cells (limit 1e-8); widen [xmin, xmax]")

    dens = [GridDensity(space, r) for r in rows]
    lam = fp.damping
    history = []
    for _ in range(fp.max_iters):
        _, ufield = _backward(model, grid, dens[-1], nu)
        new_rows = _forward(w0, ufield, grid.nt, dt, nu, dx)
        mixed = (1.0 - lam) * rows + lam * new_rows
        new_dens = [GridDensity(space, r) for r in mixed]
        res = max(wasserstein2(a, b) for a, b in zip(new_dens, dens))
        history.append(res)
        rows, dens = mixed, new_dens
        if res <= fp.tol:
            break
    else:
        raise ConvergenceError(
            f"no fixed point in {fp.max_iters} iterations "
            f"(last residual {history[-1]:.3e})",
            residual_history=np.asarray(history))

    # re-solve the value against the final flow so the terminal slice and
    # the derivative fields are exactly consistent with it
    u, ufield = _backward(model, grid, dens[-1], nu)
    gamma = spatial_gradient(ufield, dx)
    return Mfg0Solution(grid=grid, u=u, flow=MeasureFlow(grid.times, dens),
                        ufield=ufield, gamma=gamma,
                        residual_history=np.asarray(history))


def solve_mfg0(model: ModelSpec, grid: SpaceTimeGrid,
               fp: FixedPointConfig) -> Mfg0Solution:
    """Equilibrium on [0, T] started from the model's initial law."""
    if grid.t0 != 0.0:
        raise ConfigurationError(
            f"full solve needs a grid starting at 0, got t0 = {grid.t0}")
    _, sol = solve_subgame(model, 0.0, model.initial_law, grid, fp)
    return sol


def solve_subgame(model: ModelSpec, s: float, m: GridDensity,
                  grid: SpaceTimeGrid, fp: FixedPointConfig):
    """Equilibrium of the game restricted to [s, T] started from law m.

    Returns (derivative field at s on the x-grid, full sub-solution).
    The time grid keeps the reference step: nt_sub = max(2, nt (T-s)/T).
    """
    if not 0.0 <= s < model.horizon:
        raise DomainError(f"start time {s} outside [0, {model.horizon})")
    if grid.horizon != model.horizon:
        raise ConfigurationError(
            f"grid horizon {grid.horizon} != model horizon {model.horizon}")
    if not isinstance(m, GridDensity) or m.space != grid.space:
        raise ConfigurationError("start measure must live on the solver grid")
    nt_sub = max(2, int(round(grid.nt * (model.horizon - s) / model.horizon)))
    sub = SpaceTimeGrid(grid.xmin, grid.xmax, grid.nx, nt_sub,
                        model.horizon, t0=float(s))
    sol = _solve_on(model, m.weights, sub, fp)
    return sol.ufield[0].copy(), sol


def measure_derivative_direction(model: ModelSpec, s: float,
                                 m: EmpiricalMeasure, direction,
                                 delta, grid: SpaceTimeGrid,
                                 fp: FixedPointConfig) -> np.ndarray:
    """Directional measure derivative of the field by central differences.

    Shifts the atoms of m by +/- delta * direction, projects both clouds,
    resolves the two sub-games and differences the fields at s.  delta
    defaults to 1e-2 / (1 + max|direction|) to balance truncation against
    the sub-solver tolerance.
    """
    atoms = m.atoms
    d = np.asarray(direction, dtype=float)
    if d.shape != atoms.shape:
        raise ConfigurationError(
            f"direction shape {d.shape} != atom shape {atoms.shape}")
    if not np.all(np.isfinite(d)):
        raise DomainError("direction contains non-finite entries")
    if delta is None:
        delta = 1e-2 / (1.0 + float(np.max(np.abs(d))))
    if not delta > 0:
        raise DomainError(f"delta must be > 0, got {delta}")
    up = project(EmpiricalMeasure(atoms + delta * d), grid.space)
    dn = project(EmpiricalMeasure(atoms - delta * d), grid.space)
    field_up, _ = solve_subgame(model, s, up, grid, fp)
    field_dn, _ = solve_subgame(model, s, dn, grid, fp)
    return (field_up - field_dn) / (2.0 * delta)


# ---------------------------------------------------------------------------
# export

_MAGIC = b"MFGSOLV\x00"
_VERSION = 1
_HEADER = struct.Struct("<8s4I4d")  # magic, version, nx, nt, n_resid,
#                                     xmin, xmax, t0, horizon


def solution_csv(sol: Mfg0Solution) -> str:
    """Flat table t,x,u,ufield,gamma; floats as shortest round-trip repr."""
    times = sol.grid.times
    centers = sol.grid.space.centers
    out = ["t,x,u,ufield,gamma"]
    for k, t in enumerate(times):
        tr = repr(float(t))
        for i, x in enumerate(centers):
            out.append(f"{tr},{float(x)!r},{float(sol.u[k, i])!r},"
                       f"{float(sol.ufield[k, i])!r},{float(sol.gamma[k, i])!r}")
    return "\n".join(out) + "\n"


def save_solution(sol: Mfg0Solution, path) -> None:
    """Binary cache.  Layout, all little-endian:

    - 8-byte magic "MFGSOLV\\0", uint32 version (1), uint32 nx, uint32 nt,
      uint32 residual count, float64 xmin, xmax, t0, horizon;
    - then four row-major float64 arrays of shape (nt+1, nx): u, ufield,
      gamma, flow weights; then the residual history.
    """
    g = sol.grid
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, g.nx, g.nt,
                              len(sol.residual_history),
                              g.xmin, g.xmax, g.t0, g.horizon))
        fh.write(np.ascontiguousarray(sol.u, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(sol.ufield, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(sol.gamma, dtype="<f8").tobytes())
        w = np.stack([d.weights for d in sol.flow.densities])
        fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(sol.residual_history,
                                      dtype="<f8").tobytes())


def load_solution(path) -> Mfg0Solution:
    """Read a cache produced by save_solution; bitwise-faithful round trip."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise ConfigurationError(f"truncated solution cache {path}")
        magic, version, nx, nt, n_resid, xmin, xmax, t0, horizon = \
            _HEADER.unpack(head)
        if magic != _MAGIC or version != _VERSION:
            raise ConfigurationError(
                f"{path} is not a version-{_VERSION} solution cache")
        body = fh.read()
    per = (nt + 1) * nx
    need = (4 * per + n_resid) * 8
    if len(body) != need:
        raise ConfigurationError(
            f"cache {path} holds {len(body)} payload bytes, expected {need}")
    vals = np.frombuffer(body, dtype="<f8")
    u, ufield, gamma, w = (
        vals[i * per:(i + 1) * per].reshape(nt + 1, nx).copy()
        for i in range(4))
    resid = vals[4 * per:].copy()
    grid = SpaceTimeGrid(xmin, xmax, int(nx), int(nt), horizon, t0=t0)
    space = grid.space
    dens = [GridDensity._from_normalized(space, row) for row in w]
    return Mfg0Solution(grid=grid, u=u, flow=MeasureFlow(grid.times, dens),
                        ufield=ufield, gamma=gamma, residual_history=resid)
