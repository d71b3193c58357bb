"""First-order common-noise correction via the linear variational system.

The derivative pair (U, V) of the state and adjoint in the common-noise
intensity solves a linear forward-backward system whose backward part
decouples through the flat solution: V_t = gamma(t, X0_t) U_t + eta_t(X0_t),
where gamma is the space derivative of the flat feedback field and eta is
the measure derivative of that field in the direction of the U ensemble.
This makes U integrable forward by Euler, one finite-difference sub-game
resolve per common path and refresh step; no martingale integrands are
ever materialized.  The ensemble does not depend on the noise intensity
itself, so one solve serves a whole intensity sweep.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ConvergenceError, DomainError
from .eps_tree import CommonNoiseTree, OpenLoopStrategy, TreeSolution
from .lq_oracle import solve_riccati
from .measure import EmpiricalMeasure, sample
from .mfg0 import (
    FixedPointConfig,
    Mfg0Solution,
    SpaceTimeGrid,
    measure_derivative_direction,
)
from .model import LQCost, ModelSpec

MODES = ("subgame_fd", "lq_closed_form")


@dataclass(frozen=True)
class VariationalEnsemble:
    """Forward-integrated derivative processes over a grid of noises.

    X0paths and alpha0 hold the flat state paths and their feedback
    controls, shared across common paths; U and V are indexed
    (common path, particle, time).  wtilde carries the raw common
    increments actually consumed, one row per common path.
    """

    times: np.ndarray
    X0paths: np.ndarray
    alpha0: np.ndarray
    U: np.ndarray
    V: np.ndarray
    wtilde: np.ndarray

    def __post_init__(self):
        M, N, nt1 = self.U.shape
        problems = []
        if self.times.shape != (nt1,):
            problems.append(f"times shape {self.times.shape} != ({nt1},)")
        if self.V.shape != (M, N, nt1):
            problems.append(f"V shape {self.V.shape} != U shape {self.U.shape}")
        if self.X0paths.shape != (N, nt1):
            problems.append(
                f"X0paths shape {self.X0paths.shape} != ({N}, {nt1})")
        if self.alpha0.shape != (N, nt1):
            problems.append(
                f"alpha0 shape {self.alpha0.shape} != ({N}, {nt1})")
        if self.wtilde.shape != (M, nt1 - 1):
            problems.append(
                f"wtilde shape {self.wtilde.shape} != ({M}, {nt1 - 1})")
        if problems:
            raise ConfigurationError("; ".join(problems), problems=problems)
        if np.any(self.U[:, :, 0] != 0.0):
            raise ConfigurationError("U must start at exactly zero")

    @property
    def n_common(self) -> int:
        return self.U.shape[0]

    @property
    def n_particles(self) -> int:
        return self.U.shape[1]


def solve_variational(model: ModelSpec, flat: Mfg0Solution,
                      n_particles: int = 200, n_common: int = 64,
                      mode: str = "subgame_fd", rng_stream=0,
                      fd_delta: float = 1e-2, eta_substeps: int = 1,
                      wtilde=None, fp: FixedPointConfig = None,
                      ) -> VariationalEnsemble:
    """Simulate flat particle paths and integrate (U, V) forward.

    The flat paths ride the converged feedback of `flat` with individual
    noise only.  U then follows dU = -V dt + dWtilde with
    V = gamma U + eta; eta is refreshed every eta_substeps fine steps by
    two sub-game resolves per common path (mode subgame_fd), or evaluated
    from the Riccati coefficient b (mode lq_closed_form, LQ models only).
    Passing wtilde (n_common x nt) overrides the Gaussian increments,
    which is how tree branches are replayed.
    """
    if mode not in MODES:
        raise ConfigurationError(f"mode must be one of {MODES}, got {mode!r}")
    if n_particles < 1 or n_common < 1:
        raise DomainError(
            f"need n_particles >= 1 and n_common >= 1, "
            f"got {n_particles}, {n_common}")
    if eta_substeps < 1:
        raise DomainError(f"eta_substeps must be >= 1, got {eta_substeps}")
    if mode == "lq_closed_form" and not isinstance(model.cost, LQCost):
        raise ConfigurationError(
            "lq_closed_form mode needs an LQ terminal cost, got "
            + type(model.cost).__name__)
    if fp is None:
        # sub-game flows around projected atom clouds sit at a higher
        # transport-residual floor than smooth benchmarks
        fp = FixedPointConfig(tol=1e-7)

    grid = flat.grid
    nt = grid.nt
    dt = grid.dt
    centers = grid.space.centers
    sigma = model.sigma
    rng = np.random.default_rng(rng_stream)

    x0 = sample(model.initial_law, n_particles, rng).atoms
    xi = rng.standard_normal((n_particles, nt))
    if wtilde is None:
        wtilde = math.sqrt(dt) * rng.standard_normal((n_common, nt))
    else:
        wtilde = np.asarray(wtilde, dtype=float)
        if wtilde.shape != (n_common, nt):
            raise ConfigurationError(
                f"wtilde shape {wtilde.shape} != (n_common, nt) = "
                f"{(n_common, nt)}")

    X = np.empty((n_particles, nt + 1))
    A = np.empty((n_particles, nt + 1))
    X[:, 0] = x0
    for k in range(nt):
        A[:, k] = -np.interp(X[:, k], centers, flat.ufield[k])
        X[:, k + 1] = X[:, k] + A[:, k] * dt + sigma * math.sqrt(dt) * xi[:, k]
    A[:, nt] = -np.interp(X[:, nt], centers, flat.ufield[nt])

    if mode == "lq_closed_form":
        ric = solve_riccati(model.cost.q, model.cost.kappa, model.horizon, nt)

    U = np.zeros((n_common, n_particles, nt + 1))
    V = np.empty((n_common, n_particles, nt + 1))
    eta_x = np.zeros((n_common, n_particles))
    for k in range(nt):
        gam = np.interp(X[:, k], centers, flat.gamma[k])
        if mode == "lq_closed_form":
            eta_x = ric.b[k] * U[:, :, k].mean(axis=1, keepdims=True) \
                * np.ones((1, n_particles))
        elif k % eta_substeps == 0:
            eta_x = _refresh_eta(model, grid, fp, fd_delta, float(grid.times[k]),
                                 X[:, k], U[:, :, k], centers)
        V[:, :, k] = gam[None, :] * U[:, :, k] + eta_x
        U[:, :, k + 1] = U[:, :, k] - V[:, :, k] * dt + wtilde[:, k][:, None]

    # terminal slice: the field at T is the cost gradient itself, so its
    # measure derivative is available in closed form; a stale eta here
    # would miss the last common kick entirely
    gam = np.interp(X[:, nt], centers, flat.gamma[nt])
    if mode == "lq_closed_form":
        eta_x = ric.b[nt] * U[:, :, nt].mean(axis=1, keepdims=True) \
            * np.ones((1, n_particles))
    else:
        eta_x = _terminal_eta(model, grid, X[:, nt], U[:, :, nt], centers)
    V[:, :, nt] = gam[None, :] * U[:, :, nt] + eta_x

    return VariationalEnsemble(times=grid.times.copy(), X0paths=X, alpha0=A,
                               U=U, V=V, wtilde=wtilde)


def _refresh_eta(model, grid, fp, fd_delta, t, atoms, U_slice, centers):
    """Measure derivative of the flat field along each path's U direction."""
    cloud = EmpiricalMeasure(atoms)
    out = np.empty_like(U_slice)
    for m in range(U_slice.shape[0]):
        direction = U_slice[m]
        if not np.any(direction):
            out[m] = 0.0
            continue
        try:
            field = measure_derivative_direction(
                model, t, cloud, direction, fd_delta, grid, fp)
        except ConvergenceError as err:
            raise ConvergenceError(
                f"variational sub-game at t = {t:.4g}, common path {m}: {err}",
                residual_history=err.residual_history) from err
        out[m] = np.interp(atoms, centers, field)
    return out


def _terminal_eta(model, grid, atoms, U_slice, centers):
    """Terminal measure derivative, closed form.

    At the horizon the flat field equals the terminal cost gradient, so
    the derivative along U is an empirical mean over the cloud with no
    sub-game solve.  Evaluated on the grid and interpolated like every
    other refresh.
    """
    cloud = EmpiricalMeasure(atoms)
    out = np.empty_like(U_slice)
    for m in range(U_slice.shape[0]):
        direction = U_slice[m]
        if not np.any(direction):
            out[m] = 0.0
            continue
        field = np.array([
            np.mean(model.cost.gxm(xg, cloud, atoms) * direction)
            for xg in centers])
        out[m] = np.interp(atoms, centers, field)
    return out


@dataclass(frozen=True)
class CorrectionStrategy:
    """First-order corrected control beta = alpha0 - eps * V.

    Open-loop by construction: each (common path, particle) pair carries
    its own control path aligned with the noises that generated the
    ensemble.
    """

    ensemble: VariationalEnsemble
    eps: float

    def controls(self) -> np.ndarray:
        """(n_common, n_particles, nt+1) control paths."""
        e = self.ensemble
        return e.alpha0[None, :, :] - self.eps * e.V

    def open_loop(self, solution: TreeSolution, sigma: float
                  ) -> OpenLoopStrategy:
        """Flatten to one particle per (common path, particle) pair.

        The individual noise that drove the flat paths is recovered
        exactly from the stored states and controls, keeping beta adapted
        to its own noise; common paths are mapped to tree branches by
        their replayed increments.
        """
        e = self.ensemble
        leaves = branch_leaves(e, solution.tree, solution.grid)
        M, N = e.n_common, e.n_particles
        nt = e.times.size - 1
        dt = float(e.times[1] - e.times[0])
        noise_term = (e.X0paths[:, 1:] - e.X0paths[:, :-1]
                      - e.alpha0[:, :-1] * dt) / (sigma * math.sqrt(dt))
        controls = self.controls()[:, :, :nt].reshape(M * N, nt)
        return OpenLoopStrategy(
            controls=controls,
            x0=np.tile(e.X0paths[:, 0], M),
            leaf_ids=np.repeat(leaves, N),
            noise=np.tile(noise_term, (M, 1)))


def build_correction_strategy(ensemble: VariationalEnsemble,
                              eps: float) -> CorrectionStrategy:
    if eps < 0:
        raise DomainError(f"eps must be >= 0, got {eps}")
    return CorrectionStrategy(ensemble=ensemble, eps=float(eps))


# -- tree coupling ---------------------------------------------------------


def sample_branch_increments(tree: CommonNoiseTree, grid: SpaceTimeGrid,
                             n_common: int, rng_stream):
    """Uniformly sampled tree branches as fine-grid increment rows.

    Each coarse increment lands on the last fine step of its interval,
    matching the solver's end-of-interval translation.  Returns
    (wtilde, leaf ids).
    """
    rng = np.random.default_rng(rng_stream)
    bits = rng.integers(0, 2, size=(n_common, tree.depth))
    return _bits_to_increments(tree, grid, bits)


def enumerate_branch_increments(tree: CommonNoiseTree, grid: SpaceTimeGrid,
                                copies: int = 1):
    """Every leaf `copies` times: stratified coverage for open-loop costs."""
    leaves = np.repeat(np.arange(tree.n_leaves), copies)
    bits = (leaves[:, None] >> np.arange(tree.depth - 1, -1, -1)) & 1
    return _bits_to_increments(tree, grid, bits)


def _bits_to_increments(tree, grid, bits):
    if tree.depth * tree.substeps != grid.nt:
        raise ConfigurationError(
            f"depth*substeps = {tree.depth * tree.substeps} must equal "
            f"grid.nt = {grid.nt}")
    n = bits.shape[0]
    wtilde = np.zeros((n, grid.nt))
    signs = 2.0 * bits - 1.0
    K = tree.substeps
    for level in range(tree.depth):
        wtilde[:, (level + 1) * K - 1] = tree.increment * signs[:, level]
    leaves = np.zeros(n, dtype=int)
    for level in range(tree.depth):
        leaves = 2 * leaves + 1 + bits[:, level]
    return wtilde, leaves


def branch_leaves(ensemble: VariationalEnsemble, tree: CommonNoiseTree,
                  grid: SpaceTimeGrid) -> np.ndarray:
    """Map each common path back to its tree leaf, validating the replay."""
    if ensemble.times.shape != grid.times.shape or np.any(
            ensemble.times != grid.times):
        raise ConfigurationError(
            "ensemble time grid does not match the tree solve grid")
    K = tree.substeps
    w = ensemble.wtilde
    if w.shape[1] != tree.depth * K:
        raise ConfigurationError(
            f"increment rows have {w.shape[1]} steps; tree needs "
            f"{tree.depth * K}")
    kick = w[:, K - 1::K]
    rest = w.copy()
    rest[:, K - 1::K] = 0.0
    if np.any(rest != 0.0) or np.any(
            np.abs(np.abs(kick) - tree.increment) > 1e-12 * tree.increment):
        raise ConfigurationError(
            "common increments are not a replay of this tree: need "
            "+-sqrt(coarse_dt) on the last fine step of each coarse "
            "interval and zero elsewhere")
    bits = (kick > 0).astype(int)
    leaves = np.zeros(w.shape[0], dtype=int)
    for level in range(tree.depth):
        leaves = 2 * leaves + 1 + bits[:, level]
    return leaves


def cross_validate_vs_tree(ensemble: VariationalEnsemble,
                           solution: TreeSolution) -> dict:
    """First-order expansion error against tree-simulated noisy paths.

    Re-runs the Euler dynamics under the tree's branch fields with the
    exact individual noise recovered from the flat paths plus the
    replayed common increments, then measures
    E[sup_t ((X_eps - X0)/eps - U)^2] and the gradient analogue.
    """
    if solution.eps <= 0:
        raise ConfigurationError(
            "remainder is undefined at eps = 0; use a small positive "
            "intensity for floor runs")
    tree, grid = solution.tree, solution.grid
    leaves = branch_leaves(ensemble, tree, grid)
    nt = grid.nt
    dt = grid.dt
    centers = grid.space.centers
    K = tree.substeps
    eps = solution.eps
    X0 = ensemble.X0paths
    noise_term = (X0[:, 1:] - X0[:, :-1] - ensemble.alpha0[:, :-1] * dt)

    M, N = ensemble.n_common, ensemble.n_particles
    x_rem = np.empty(M)
    y_rem = np.empty(M)
    for m in range(M):
        rows = solution.branch_fine_gradients(int(leaves[m]))
        branch = tree.branch_to(int(leaves[m]))
        X = np.empty((N, nt + 1))
        Y = np.empty((N, nt + 1))
        X[:, 0] = X0[:, 0]
        for k in range(nt):
            Y[:, k] = np.interp(X[:, k], centers, rows[k])
            X[:, k + 1] = X[:, k] - Y[:, k] * dt + noise_term[:, k]
            if (k + 1) % K == 0:
                child = branch[(k + 1) // K]
                X[:, k + 1] += eps * tree.increment * tree.increment_sign(child)
        Y[:, nt] = np.interp(X[:, nt], centers, rows[nt])
        dx = (X - X0) / eps - ensemble.U[m]
        dy = (Y - (-ensemble.alpha0)) / eps - ensemble.V[m]
        x_rem[m] = np.mean(np.max(dx ** 2, axis=1))
        y_rem[m] = np.mean(np.max(dy ** 2, axis=1))
    return {
        "eps": eps,
        "n_common": M,
        "n_particles": N,
        "x_remainder": float(x_rem.mean()),
        "y_remainder": float(y_rem.mean()),
        "x_per_path": x_rem.tolist(),
        "y_per_path": y_rem.tolist(),
    }


# -- diagnostics -----------------------------------------------------------


def _moment_stats(samples):
    """Mean, standard error, skewness, excess kurtosis, Jarque-Bera."""
    M = samples.shape[0]
    mean = samples.mean(axis=0)
    c = samples - mean
    var = np.mean(c ** 2, axis=0)
    std = np.sqrt(var)
    safe = np.where(std > 0, std, 1.0)
    skew = np.mean(c ** 3, axis=0) / safe ** 3
    # constant samples carry no shape information: report zero excess
    kurt = np.where(var > 0, np.mean(c ** 4, axis=0) / safe ** 4 - 3.0, 0.0)
    jb = M / 6.0 * (skew ** 2 + 0.25 * kurt ** 2)
    return mean, std / math.sqrt(M), skew, kurt, jb


def gaussianity_diagnostics(ensemble: VariationalEnsemble, t_probes,
                            mirror: VariationalEnsemble = None,
                            particle_ids=None) -> dict:
    """Centered-Gaussian moment checks across common paths.

    For each probed time and particle: sample mean with its standard
    error, skewness, excess kurtosis, and a Jarque-Bera statistic, for
    both U and V.  `mirror` should be the ensemble rebuilt from -wtilde
    with the same stream; if given, the exact antisymmetry residual is
    reported.  A degenerate all-zero-increment ensemble sets a flag and
    skips the band bookkeeping.
    """
    M = ensemble.n_common
    if M < 500 and not _degenerate(ensemble):
        raise DomainError(
            f"need at least 500 common paths for stable moment bands, "
            f"got {M}")
    if particle_ids is None:
        particle_ids = list(range(min(8, ensemble.n_particles)))
    times = ensemble.times
    report = {
        "n_common": M,
        "degenerate": _degenerate(ensemble),
        "mean_band": None,
        "skew_band": 5.0 * math.sqrt(6.0 / M),
        "kurt_band": 5.0 * math.sqrt(24.0 / M),
        "probes": [],
    }
    for t in t_probes:
        k = int(np.argmin(np.abs(times - t)))
        if abs(times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise DomainError(f"probe time {t} is not on the grid")
        entry = {"t": float(times[k]), "index": k, "particles": []}
        for j in particle_ids:
            mu_u, se_u, sk_u, ku_u, jb_u = _moment_stats(ensemble.U[:, j, k])
            mu_v, se_v, sk_v, ku_v, jb_v = _moment_stats(ensemble.V[:, j, k])
            entry["particles"].append({
                "particle": int(j),
                "mean_u": float(mu_u), "se_u": float(se_u),
                "skew_u": float(sk_u), "kurt_u": float(ku_u),
                "jarque_bera_u": float(jb_u),
                "mean_v": float(mu_v), "se_v": float(se_v),
                "skew_v": float(sk_v), "kurt_v": float(ku_v),
                "jarque_bera_v": float(jb_v),
            })
        report["probes"].append(entry)
    if mirror is not None:
        if not np.array_equal(mirror.wtilde, -ensemble.wtilde):
            raise ConfigurationError(
                "mirror ensemble must be built from the negated increments")
        if not np.array_equal(mirror.X0paths, ensemble.X0paths):
            raise ConfigurationError(
                "mirror ensemble must share the flat paths (same stream)")
        report["antisymmetry_max_abs"] = float(
            max(np.max(np.abs(mirror.U + ensemble.U)),
                np.max(np.abs(mirror.V + ensemble.V))))
    return report


def _degenerate(ensemble) -> bool:
    return not np.any(ensemble.wtilde)


def ensemble_csv(ensemble: VariationalEnsemble) -> str:
    """Flat table: path, particle, t, X0, U, V."""
    out = ["path,particle,t,x0,u,v"]
    times = ensemble.times
    for m in range(ensemble.n_common):
        for j in range(ensemble.n_particles):
            for k, t in enumerate(times):
                out.append(
                    f"{m},{j},{float(t)!r},{float(ensemble.X0paths[j, k])!r},"
                    f"{float(ensemble.U[m, j, k])!r},"
                    f"{float(ensemble.V[m, j, k])!r}")
    return "\n".join(out) + "\n"
