"""Experiment sweeps: remainder rates, field gaps, Nash gaps, slope fits.

Each sweep runs one job per noise intensity through a deterministic work
pool, estimates the scheme floor from a near-zero (or zero) control run,
fits a log-log slope on the points that clear three times the floor, and
reports enough to audit the fit: per-point metrics, the floor, inclusion
flags, and a config snapshot.
"""

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ConvergenceError, DomainError
from .eps_tree import CommonNoiseTree, best_response, evaluate_cost, solve_eps_mfg
from .measure import EmpiricalMeasure, GridDensity, moments, project
from .mfg0 import FixedPointConfig, SpaceTimeGrid, solve_mfg0, solve_subgame
from .model import LQCost, ModelSpec, check_assumptions
from .variational import (
    branch_leaves,
    build_correction_strategy,
    cross_validate_vs_tree,
    enumerate_branch_increments,
    sample_branch_increments,
    solve_variational,
)

DEFAULT_EPS = (0.4, 0.2, 0.1, 0.05)

# a point enters the slope fit only this far above the control-run floor
FLOOR_MARGIN = 3.0

# sweeps run many tree solves; the slice-wise transport residual has a
# float floor a shade above the solver's 1e-8 default
SWEEP_TOL = FixedPointConfig(tol=5e-8)


@dataclass(frozen=True)
class SweepReport:
    """One experiment's measured curve plus the fit that summarizes it.

    metrics[i] belongs to eps_values[i]; the slope is fitted only on
    points at least FLOOR_MARGIN times the floor (included[i]), and is
    NaN when fewer than three qualify.  seconds holds per-point wall
    clock and never enters serialized comparisons.
    """

    experiment: str
    eps_values: tuple
    metrics: tuple
    fitted_slope: float
    slope_stderr: float
    discretization_floor: float
    config: dict
    seconds: tuple
    included: tuple
    flags: tuple = ()
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.eps_values)
        problems = [
            f"{name} has {len(value)} entries for {n} intensities"
            for name, value in (("metrics", self.metrics),
                                ("seconds", self.seconds),
                                ("included", self.included))
            if len(value) != n
        ]
        if problems:
            raise ConfigurationError("; ".join(problems), problems=problems)


def fit_loglog_slope(xs, ys):
    """Ordinary least squares of log(ys) on log(xs).

    Returns (slope, stderr, intercept); stderr is the usual OLS slope
    standard error, zero for an exact fit.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ConfigurationError(
            f"need matching 1-d arrays, got shapes {xs.shape} and {ys.shape}")
    if xs.size < 3:
        raise DomainError(f"need at least 3 points, got {xs.size}")
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise DomainError("log-log fit needs strictly positive inputs")
    lx = np.log(xs)
    ly = np.log(ys)
    dx = lx - lx.mean()
    sxx = float(np.dot(dx, dx))
    if sxx == 0.0:
        raise DomainError("all abscissae coincide; slope is undefined")
    slope = float(np.dot(dx, ly - ly.mean()) / sxx)
    intercept = float(ly.mean() - slope * lx.mean())
    resid = ly - (slope * lx + intercept)
    ssr = float(np.dot(resid, resid))
    stderr = math.sqrt(ssr / (xs.size - 2) / sxx)
    return slope, stderr, intercept


# -- shared plumbing --------------------------------------------------------


def _require_assumptions(model):
    report = check_assumptions(model)
    if not report.all_passed:
        failed = sorted(k for k, c in report.checks.items() if not c.passed)
        raise ConfigurationError(
            "model fails standing assumptions " + ", ".join(failed)
            + "; see check_assumptions for witnesses")


def _validate_eps(eps_values):
    eps_values = tuple(float(e) for e in eps_values)
    problems = []
    if not eps_values:
        problems.append("empty intensity list")
    if any(e <= 0 for e in eps_values):
        problems.append("intensities must be positive (the floor run is "
                        "added by the sweep itself)")
    if len(set(eps_values)) != len(eps_values):
        problems.append("duplicate intensities")
    if problems:
        raise ConfigurationError("; ".join(problems), problems=problems)
    return eps_values


def _run_jobs(jobs, workers):
    """Execute (label, callable) pairs, preserving order; returns
    (results, seconds).  Convergence failures are annotated with their
    label so a sweep names the point that broke."""

    def run(label, fn):
        t0 = time.perf_counter()
        try:
            out = fn()
        except ConvergenceError as err:
            raise ConvergenceError(
                f"sweep point eps = {label:g}: {err}",
                residual_history=err.residual_history) from err
        return out, time.perf_counter() - t0

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run, label, fn) for label, fn in jobs]
            pairs = [f.result() for f in futures]
    else:
        pairs = [run(label, fn) for label, fn in jobs]
    return [p[0] for p in pairs], [p[1] for p in pairs]


def _snapshot(model, grid, tree, **extra):
    mean, var, _ = moments(model.initial_law)
    cfg = {
        "model": {
            "cost": model.cost.config(),
            "sigma": model.sigma,
            "horizon": model.horizon,
            "initial_mean": mean,
            "initial_var": var,
        },
        "grid": {"xmin": grid.xmin, "xmax": grid.xmax,
                 "nx": grid.nx, "nt": grid.nt},
        "tree": {"depth": tree.depth, "substeps": tree.substeps},
        "fp_tol": SWEEP_TOL.tol,
    }
    cfg.update(extra)
    return cfg


def _auto_mode(model):
    return "lq_closed_form" if isinstance(model.cost, LQCost) else "subgame_fd"


def _check_flat(flat, grid):
    if flat is not None and flat.grid != grid:
        raise ConfigurationError(
            "supplied baseline solution lives on a different grid "
            f"({flat.grid} vs {grid})")
    return flat


def _finish(experiment, eps_values, metrics, floor, config, seconds,
            flags=(), extras=None):
    metrics = tuple(float(v) for v in metrics)
    included = tuple(bool(v > 0 and v >= FLOOR_MARGIN * floor)
                     for v in metrics)
    flags = tuple(flags)
    if not any(included):
        flags += ("exact first order: every point sits at the "
                  "discretization floor",)
    picked = [i for i, ok in enumerate(included) if ok]
    if len(picked) >= 3:
        slope, stderr, _ = fit_loglog_slope(
            [eps_values[i] for i in picked], [metrics[i] for i in picked])
        if len(picked) < len(metrics):
            left_out = [f"{eps_values[i]:g}" for i, ok in
                        enumerate(included) if not ok]
            flags += ("sub-floor points excluded from the fit: eps in {"
                      + ", ".join(left_out) + "}",)
    else:
        slope, stderr = float("nan"), float("nan")
        if any(included):
            flags += (f"fit skipped: only {len(picked)} of {len(metrics)} "
                      "points clear the floor",)
    return SweepReport(
        experiment=experiment, eps_values=eps_values, metrics=metrics,
        fitted_slope=slope, slope_stderr=stderr,
        discretization_floor=float(floor), config=config,
        seconds=tuple(seconds), included=included, flags=flags,
        extras=extras or {})


# -- remainder of the first-order expansion ---------------------------------


def remainder_sweep(model: ModelSpec, grid: SpaceTimeGrid,
                    tree: CommonNoiseTree, eps_values=DEFAULT_EPS, *,
                    n_particles: int = 200, n_common: int = 64,
                    mode: str = None, rng_stream=0, fd_delta: float = 1e-2,
                    eps_floor: float = 1e-3, fp: FixedPointConfig = None,
                    flat=None, workers: int = 1) -> SweepReport:
    """E[sup_t ((X_eps - X0)/eps - U)^2] across intensities.

    One derivative ensemble (intensity-free) serves every point; each
    job solves the conditional-law equilibrium at its eps and replays
    the matched branches.  The floor comes from a near-zero control run:
    at exactly eps = 0 the remainder is 0/0, so the control uses
    eps_floor where the quotient is pure scheme error.  flat, when
    given, must be the baseline equilibrium on this grid (saves the
    solve when a cached one exists).
    """
    eps_values = _validate_eps(eps_values)
    if not 0 < eps_floor < min(eps_values):
        raise ConfigurationError(
            f"eps_floor {eps_floor} must sit strictly inside "
            f"(0, {min(eps_values)})")
    _require_assumptions(model)
    fp = fp or SWEEP_TOL
    mode = mode or _auto_mode(model)

    flat = _check_flat(flat, grid) or solve_mfg0(model.with_eps(0.0), grid,
                                                 fp=fp)
    rng = np.random.default_rng(rng_stream)
    wtilde, _ = sample_branch_increments(tree, grid, n_common, rng)
    ensemble = solve_variational(model, flat, n_particles=n_particles,
                                 n_common=n_common, mode=mode,
                                 rng_stream=rng, fd_delta=fd_delta,
                                 wtilde=wtilde)

    def point(eps):
        def job():
            sol = solve_eps_mfg(model.with_eps(eps), tree, grid, fp=fp)
            return cross_validate_vs_tree(ensemble, sol)
        return job

    labels = list(eps_values) + [eps_floor]
    reports, seconds = _run_jobs([(e, point(e)) for e in labels], workers)
    metrics = [r["x_remainder"] for r in reports[:-1]]
    floor = reports[-1]["x_remainder"]
    config = _snapshot(model, grid, tree, n_particles=n_particles,
                       n_common=n_common, mode=mode, fd_delta=fd_delta,
                       eps_floor=eps_floor, seed=_seed_label(rng_stream))
    extras = {"y_remainders": [r["y_remainder"] for r in reports[:-1]],
              "y_floor": reports[-1]["y_remainder"]}
    return _finish("remainder", eps_values, metrics, floor, config,
                   seconds[:-1], extras=extras)


# -- decoupling-field gap ---------------------------------------------------


def default_probes(model: ModelSpec, grid: SpaceTimeGrid,
                   tree: CommonNoiseTree, flat=None,
                   fp: FixedPointConfig = None):
    """(t, xs, m) probes at the root and mid-horizon coarse times.

    Measures ride the flat equilibrium flow; abscissae straddle each
    law's mean by up to two standard deviations, clipped inside the
    domain.
    """
    fp = fp or SWEEP_TOL
    if flat is None:
        flat = solve_mfg0(model.with_eps(0.0), grid, fp=fp)
    levels = sorted({0, tree.depth // 2})
    coarse = grid.nt // tree.depth
    probes = []
    for level in levels:
        t = level * model.horizon / tree.depth
        m = flat.flow[level * coarse]
        mean, var, _ = moments(m)
        std = math.sqrt(max(var, 1e-12))
        xs = mean + std * np.array([-2.0, -1.0, 0.0, 1.0, 2.0])
        pad = 2.0 * grid.space.dx
        xs = np.clip(xs, grid.xmin + pad, grid.xmax - pad)
        probes.append((t, xs, m))
    return probes


def _validate_probes(probes, model, grid, tree):
    problems = []
    for i, (t, xs, m) in enumerate(probes):
        ratio = t * tree.depth / model.horizon
        if abs(ratio - round(ratio)) > 1e-9 or not 0 <= t < model.horizon:
            problems.append(
                f"probe {i}: time {t} is not a coarse node time")
        xs = np.asarray(xs, dtype=float)
        if np.any(xs < grid.xmin) or np.any(xs > grid.xmax):
            problems.append(f"probe {i}: abscissae leave the domain")
        if not isinstance(m, GridDensity) or m.space != grid.space:
            problems.append(
                f"probe {i}: measure must live on the solver grid")
    if problems:
        raise ConfigurationError("; ".join(problems), problems=problems)


def decoupling_gap_sweep(model: ModelSpec, grid: SpaceTimeGrid,
                         tree: CommonNoiseTree, eps_values=DEFAULT_EPS, *,
                         probes=None, eps_floor: float = 1e-3,
                         fp: FixedPointConfig = None, flat=None,
                         workers: int = 1) -> SweepReport:
    """sup over probes of |field at eps minus flat field|.

    Either field solves the game restricted to [t, T] from the probed
    measure; time homogeneity maps that to a fresh horizon T - t, where
    the noisy side runs a conditional-law tree of the remaining depth and
    the flat side reuses the sub-game solver.  The near-zero control run
    supplies the floor (both machines coincide bitwise at eps = 0).
    """
    eps_values = _validate_eps(eps_values)
    if not 0 < eps_floor < min(eps_values):
        raise ConfigurationError(
            f"eps_floor {eps_floor} must sit strictly inside "
            f"(0, {min(eps_values)})")
    _require_assumptions(model)
    fp = fp or SWEEP_TOL
    flat = _check_flat(flat, grid) or solve_mfg0(model.with_eps(0.0), grid,
                                                 fp=fp)
    if probes is None:
        probes = default_probes(model, grid, tree, flat=flat, fp=fp)
    _validate_probes(probes, model, grid, tree)

    centers = grid.space.centers
    # a probe at (0, initial law) is the baseline solve itself
    flat_slices = [
        flat.ufield[0]
        if t == 0 and np.array_equal(m.weights, flat.flow[0].weights)
        else solve_subgame(model.with_eps(0.0), t, m, grid, fp)[0]
        for t, xs, m in probes]

    def point(eps):
        def job():
            worst = 0.0
            for (t, xs, m), u0 in zip(probes, flat_slices):
                level = int(round(t * tree.depth / model.horizon))
                span = model.horizon - t
                sub_model = ModelSpec(
                    sigma=model.sigma, eps=eps, horizon=span,
                    initial_law=m, cost=model.cost)
                sub_tree = CommonNoiseTree(
                    depth=tree.depth - level, substeps=tree.substeps,
                    horizon=span)
                sub_grid = SpaceTimeGrid(
                    grid.xmin, grid.xmax, grid.nx,
                    (tree.depth - level) * tree.substeps, span)
                sol = solve_eps_mfg(sub_model, sub_tree, sub_grid, fp=fp)
                u_eps = -sol.feedback[0]
                gap = np.interp(xs, centers, u_eps) \
                    - np.interp(xs, centers, u0)
                worst = max(worst, float(np.max(np.abs(gap))))
            return worst
        return job

    labels = list(eps_values) + [eps_floor]
    values, seconds = _run_jobs([(e, point(e)) for e in labels], workers)
    config = _snapshot(model, grid, tree, eps_floor=eps_floor,
                       probe_times=[float(t) for t, _, _ in probes])
    # the sup gap itself is the fitted metric; dividing by eps gives the
    # first-order view (worst gap per unit of noise, expected to vanish)
    extras = {"gap_over_eps": [float(v / e) for v, e in
                               zip(values[:-1], eps_values)]}
    return _finish("decoupling_gap", eps_values, values[:-1], values[-1],
                   config, seconds[:-1], extras=extras)


# -- Nash gap of the corrected strategy -------------------------------------


@dataclass(frozen=True)
class TransportedFlow:
    """Conditional node laws of the population playing a fixed strategy."""

    tree: CommonNoiseTree
    grid: SpaceTimeGrid
    densities: tuple
    eps: float


def transport_under_correction(model: ModelSpec, ensemble, eps: float,
                               tree: CommonNoiseTree, grid: SpaceTimeGrid,
                               control_eps: float = None) -> TransportedFlow:
    """Push the ensemble's particles through the tree under beta_eps.

    Every particle keeps the individual noise recovered from its flat
    path; branch translations of size eps enter at coarse boundaries.
    control_eps sets the correction strength separately (default: eps),
    letting the uncorrected strategy face the same noisy dynamics.  Node
    laws are grid projections of the pooled states of all branches
    through the node, so the full tree must be covered (enumerated
    increments).
    """
    if control_eps is None:
        control_eps = eps
    leaves = branch_leaves(ensemble, tree, grid)
    missing = sorted(set(tree.leaves()) - set(int(v) for v in leaves))
    if missing:
        raise ConfigurationError(
            f"population transport needs every branch; leaves {missing} "
            "are unsampled (build the ensemble from enumerated increments)")
    controls = build_correction_strategy(ensemble, control_eps).controls()
    X0 = ensemble.X0paths
    dt = grid.dt
    K = tree.substeps
    noise = X0[:, 1:] - X0[:, :-1] - ensemble.alpha0[:, :-1] * dt
    shift = eps * tree.increment

    pooled = [[] for _ in range(tree.n_nodes)]
    for m in range(ensemble.n_common):
        branch = tree.branch_to(int(leaves[m]))
        x = X0[:, 0].copy()
        pooled[0].append(x.copy())
        for k in range(grid.nt):
            x = x + controls[m, :, k] * dt + noise[:, k]
            if (k + 1) % K == 0:
                child = branch[(k + 1) // K]
                x = x + shift * tree.increment_sign(child)
                pooled[child].append(x.copy())
        # interior fine steps need no storage: laws live at node times
    densities = tuple(
        project(EmpiricalMeasure(np.concatenate(atoms)), grid.space)
        for atoms in pooled)
    return TransportedFlow(tree=tree, grid=grid, densities=densities,
                           eps=float(eps))


def _replay_feedback_cost(model: ModelSpec, flow, strategy, ensemble,
                          tree: CommonNoiseTree,
                          grid: SpaceTimeGrid) -> float:
    """Cost of a feedback strategy on the ensemble's own particles.

    Shares every random draw with the open-loop evaluation: same initial
    states, same recovered individual noise, same branch assignment.
    Differencing two costs computed this way cancels the common Monte
    Carlo and time-stepping error, leaving a far smaller floor than two
    independent quadratures can reach.
    """
    leaves = branch_leaves(ensemble, tree, grid)
    X0 = ensemble.X0paths
    noise = X0[:, 1:] - X0[:, :-1] - ensemble.alpha0[:, :-1] * grid.dt
    dt = grid.dt
    K = tree.substeps
    shift = model.eps * tree.increment
    centers = grid.space.centers
    by_leaf = {}
    for m in range(ensemble.n_common):
        leaf = int(leaves[m])
        branch = tree.branch_to(leaf)
        x = X0[:, 0].copy()
        run = np.zeros_like(x)
        for k in range(grid.nt):
            rows = strategy.control_rows(branch[k // K], K)
            a = np.interp(x, centers, rows[k % K])
            run += 0.5 * a * a * dt
            x = x + a * dt + noise[:, k]
            if (k + 1) % K == 0:
                x = x + shift * tree.increment_sign(branch[(k + 1) // K])
        run += model.cost.g(x, flow.densities[leaf])
        by_leaf.setdefault(leaf, []).append(float(run.mean()))
    p = tree.leaf_probability
    return float(sum(p * np.mean(v) for v in by_leaf.values()))


def nash_gap_sweep(model: ModelSpec, grid: SpaceTimeGrid,
                   tree: CommonNoiseTree, eps_values=DEFAULT_EPS, *,
                   n_particles: int = 200, copies: int = 1,
                   mode: str = None, rng_stream=0, fd_delta: float = 1e-2,
                   fp: FixedPointConfig = None, flat=None,
                   workers: int = 1) -> SweepReport:
    """Cost of the corrected strategy minus the best-response value.

    The frozen flow is the population's own flow under the corrected
    strategy, transported branch by branch; the deviating player's value
    comes from one backward sweep against that flow.  The eps = 0
    control run (correction off, translations off) measures the pure
    scheme-plus-sampling floor.  Extras carry a second estimate of the
    same gap that replays the best response on the ensemble's own
    particles (common random numbers), whose floor is orders of
    magnitude lower.
    """
    eps_values = _validate_eps(eps_values)
    _require_assumptions(model)
    fp = fp or SWEEP_TOL
    mode = mode or _auto_mode(model)

    flat = _check_flat(flat, grid) or solve_mfg0(model.with_eps(0.0), grid,
                                                 fp=fp)
    rng = np.random.default_rng(rng_stream)
    wtilde, _ = enumerate_branch_increments(tree, grid, copies=copies)
    ensemble = solve_variational(model, flat, n_particles=n_particles,
                                 n_common=wtilde.shape[0], mode=mode,
                                 rng_stream=rng, fd_delta=fd_delta,
                                 wtilde=wtilde)

    def gap_at(eps, control_eps=None):
        def job():
            noisy = model.with_eps(eps)
            flow = transport_under_correction(model, ensemble, eps, tree,
                                              grid, control_eps=control_eps)
            strat = build_correction_strategy(
                ensemble, eps if control_eps is None else control_eps)
            cost = evaluate_cost(noisy, flow, strat.open_loop(flow,
                                                              model.sigma))
            value, br = best_response(noisy, flow, grid, workers=1)
            replay = _replay_feedback_cost(noisy, flow, br, ensemble,
                                           tree, grid)
            return cost - value, cost - replay
        return job

    labels = list(eps_values) + [0.0]
    pairs, seconds = _run_jobs([(e, gap_at(e)) for e in labels], workers)
    gaps = [g for g, _ in pairs]
    crn = [c for _, c in pairs]
    floor = abs(gaps[-1])

    # how much the first-order term buys at the strongest noise: replay
    # the sweep point with the correction switched off (reported, not
    # asserted)
    eps_top = max(eps_values)
    plain_raw, plain_crn = gap_at(eps_top, control_eps=0.0)()

    config = _snapshot(model, grid, tree, n_particles=n_particles,
                       copies=copies, mode=mode, fd_delta=fd_delta,
                       seed=_seed_label(rng_stream))
    top = list(labels).index(eps_top)
    extras = {
        "uncorrected_gap_at_largest": float(plain_raw),
        "corrected_gap_at_largest": float(gaps[top]),
        "floor_gap_signed": float(gaps[-1]),
        "crn_gaps": [float(c) for c in crn[:-1]],
        "crn_floor": float(crn[-1]),
        "crn_uncorrected_at_largest": float(plain_crn),
        "crn_corrected_at_largest": float(crn[top]),
    }
    flags = ()
    if plain_crn > extras["crn_corrected_at_largest"]:
        flags += ("first-order correction helps at the strongest noise",)
    return _finish("nash_gap", eps_values, gaps[:-1], floor, config,
                   seconds[:-1], flags=flags, extras=extras)


def _seed_label(rng_stream):
    if isinstance(rng_stream, (int, np.integer)):
        return int(rng_stream)
    return str(rng_stream)


# -- serialization ----------------------------------------------------------


def _jsonable(value):
    if isinstance(value, float) and math.isnan(value):
        return None
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    return value


def report_payload(report: SweepReport) -> dict:
    """JSON-safe view of a report, wall clock excluded (it varies run to
    run and would break byte-identical reproduction)."""
    return {
        "experiment": report.experiment,
        "eps_values": _jsonable(list(report.eps_values)),
        "metrics": _jsonable(list(report.metrics)),
        "fitted_slope": _jsonable(report.fitted_slope),
        "slope_stderr": _jsonable(report.slope_stderr),
        "discretization_floor": _jsonable(report.discretization_floor),
        "included": [bool(b) for b in report.included],
        "flags": list(report.flags),
        "extras": _jsonable(report.extras),
        "config": _jsonable(report.config),
    }


def write_report(report: SweepReport, out_dir) -> dict:
    """Emit <experiment>.json / .csv / .dat plus a timing sidecar.

    The CSV is flat (eps, metric, floor, included_in_fit); the .dat file
    is two-column plot fodder.  Timing lives in its own file so the
    deterministic artifacts stay byte-identical across reruns.
    """
    import json

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base = out / report.experiment

    json_path = base.with_suffix(".json")
    json_path.write_text(
        json.dumps(report_payload(report), indent=2, sort_keys=True) + "\n")

    rows = ["eps,metric,floor,included_in_fit"]
    for eps, metric, inc in zip(report.eps_values, report.metrics,
                                report.included):
        rows.append(f"{eps!r},{metric!r},"
                    f"{report.discretization_floor!r},{int(inc)}")
    csv_path = base.with_suffix(".csv")
    csv_path.write_text("\n".join(rows) + "\n")

    dat_path = base.with_suffix(".dat")
    dat_path.write_text("".join(
        f"{eps!r} {metric!r}\n"
        for eps, metric in zip(report.eps_values, report.metrics)))

    timing_path = out / f"{report.experiment}_timing.json"
    timing_path.write_text(json.dumps(
        {"seconds": _jsonable(list(report.seconds)),
         "total": _jsonable(float(sum(report.seconds)))}, indent=2) + "\n")
    return {"json": json_path, "csv": csv_path, "dat": dat_path,
            "timing": timing_path}
