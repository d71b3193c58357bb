"""Conditional-law solver on a binomial common-noise tree.

The common Brownian path is discretized into D coarse steps of +-sqrt(T/D),
giving a non-recombining tree of 2^(D+1)-1 nodes.  Each node carries the
conditional law of the population given the branch history; each coarse
interval is resolved by K fine PDE steps.  Both sweeps carry the common
increment as an exact state translation once per coarse step: the forward
push shifts the density, the backward sweep averages the two children
evaluated at the kicked state, and the interval PDEs use the idiosyncratic
diffusion only.  Translating the individual and the population by the same
kick is what keeps a deviating player's dynamic-programming value
consistent with simulated replay; smearing the kick into extra backward
diffusion instead leaves an O(eps^2) value bias that no grid refinement
removes.  With eps = 0 the whole construction degenerates, bit for bit, to
the flat deterministic-flow solver.
"""

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ConvergenceError, DomainError
from .measure import GridDensity, wasserstein2, sample
from .mfg0 import (
    FixedPointConfig,
    SpaceTimeGrid,
    _stability_guard,
    fp_step,
    hjb_step,
    spatial_gradient,
    zero_drift_flow,
)
from .model import ModelSpec

MAX_DEPTH = 12
MEMORY_BUDGET_FLOATS = 1 << 23


@dataclass(frozen=True)
class CommonNoiseTree:
    """Binomial discretization of the common noise on [0, horizon].

    depth coarse steps, each split into substeps fine PDE steps; every
    branch moves by +-sqrt(horizon/depth) with probability 1/2.
    """

    depth: int
    substeps: int
    horizon: float

    def __post_init__(self):
        problems = []
        if not 1 <= self.depth <= MAX_DEPTH:
            problems.append(f"depth must be in [1, {MAX_DEPTH}], got {self.depth}")
        if self.substeps < 1:
            problems.append(f"substeps must be >= 1, got {self.substeps}")
        if not self.horizon > 0:
            problems.append(f"horizon must be > 0, got {self.horizon}")
        if problems:
            raise ConfigurationError("; ".join(problems))

    @property
    def coarse_dt(self) -> float:
        return self.horizon / self.depth

    @property
    def increment(self) -> float:
        """Magnitude of one coarse common-noise step."""
        return math.sqrt(self.coarse_dt)

    @property
    def n_nodes(self) -> int:
        return (1 << (self.depth + 1)) - 1

    @property
    def n_internal(self) -> int:
        return (1 << self.depth) - 1

    @property
    def n_leaves(self) -> int:
        return 1 << self.depth

    @property
    def leaf_probability(self) -> float:
        return 0.5 ** self.depth

    def level_of(self, node: int) -> int:
        return (node + 1).bit_length() - 1

    def node_time(self, node: int) -> float:
        return self.level_of(node) * self.coarse_dt

    def level_nodes(self, level: int) -> range:
        return range((1 << level) - 1, (1 << (level + 1)) - 1)

    def leaves(self) -> range:
        return self.level_nodes(self.depth)

    def children(self, node: int):
        return 2 * node + 1, 2 * node + 2

    def parent(self, node: int) -> int:
        return (node - 1) // 2

    def increment_sign(self, node: int) -> int:
        """-1 for a down child, +1 for an up child, 0 at the root."""
        if node == 0:
            return 0
        return -1 if node % 2 == 1 else 1

    def branch_to(self, leaf: int):
        """Node ids from the root to the given leaf, inclusive."""
        if leaf not in self.leaves():
            raise DomainError(f"node {leaf} is not a leaf of depth {self.depth}")
        ids = [leaf]
        while ids[-1] != 0:
            ids.append(self.parent(ids[-1]))
        return list(reversed(ids))


@dataclass(frozen=True)
class TreeSolution:
    """Converged tree fixed point.

    densities[j] is the conditional law at node j's time given its branch;
    values[j] the value function slice; feedback[j] = -d/dx values[j] the
    equilibrium control field.  interval_ufields[i] holds the K fine-step
    value gradients on internal node i's outgoing coarse interval (left
    time endpoints), which is what the forward transport consumed.
    """

    tree: CommonNoiseTree
    grid: SpaceTimeGrid
    densities: tuple
    values: np.ndarray
    feedback: np.ndarray
    interval_ufields: np.ndarray
    root_cost: float
    residual_history: np.ndarray
    sigma: float
    eps: float

    def branch_fine_gradients(self, leaf: int) -> np.ndarray:
        """(nt+1, nx) value-gradient rows along one root-to-leaf branch."""
        K = self.tree.substeps
        rows = np.empty((self.grid.nt + 1, self.grid.space.nx))
        for level, node in enumerate(self.tree.branch_to(leaf)[:-1]):
            rows[level * K:(level + 1) * K] = self.interval_ufields[node]
        rows[-1] = -self.feedback[leaf]
        return rows


def _shift_raw(w: np.ndarray, delta: float, dx: float) -> np.ndarray:
    """Translate raw cell masses by delta, clamping overflow to end cells.

    The cell mean moves by exactly delta (up to clamped mass); delta = 0.0
    returns the input array itself so degenerate trees stay bit-identical.
    """
    if delta == 0.0:
        return w
    r = delta / dx
    j = math.floor(r)
    frac = r - j
    out = np.zeros_like(w)
    _deposit(out, w, j, 1.0 - frac)
    if frac != 0.0:
        _deposit(out, w, j + 1, frac)
    return out


def _deposit(out, w, j, scale):
    nx = out.shape[0]
    if j >= nx:
        out[-1] += scale * w.sum()
    elif j <= -nx:
        out[0] += scale * w.sum()
    elif j >= 0:
        out[j:] += scale * w[:nx - j]
        if j > 0:
            out[-1] += scale * w[nx - j:].sum()
    else:
        out[:j] += scale * w[-j:]
        out[0] += scale * w[:-j].sum()


class _SliceLayout:
    """Index map for the flat per-iteration storage of density slices.

    One row per: node (post-shift law at the node time), interior fine
    step, and pre-shift coarse endpoint.  Interior and pre-shift rows make
    the fixed-point residual cover every fine time slice, which is what
    the flat solver measures; with eps = 0 the duplicates are bitwise
    copies and the residual matches it exactly.
    """

    def __init__(self, tree: CommonNoiseTree):
        K = tree.substeps
        self.node = np.arange(tree.n_nodes)
        base = tree.n_nodes
        self.interior = []
        for _ in range(tree.n_internal):
            self.interior.append(np.arange(base, base + K - 1))
            base += K - 1
        self.preshift = list(range(base, base + tree.n_internal))
        self.total = base + tree.n_internal

    def fill_from_rows(self, tree, rows):
        """Seed every slice from a flat (nt+1, nx) time-indexed flow."""
        K = tree.substeps
        S = np.empty((self.total, rows.shape[1]))
        for j in range(tree.n_nodes):
            S[self.node[j]] = rows[tree.level_of(j) * K]
        for i in range(tree.n_internal):
            lo = tree.level_of(i) * K
            S[self.interior[i]] = rows[lo + 1:lo + K]
            S[self.preshift[i]] = rows[lo + K]
        return S

    def interval_slice(self, i, r):
        """Flat index of the density at fine step r of node i's interval."""
        return self.node[i] if r == 0 else self.interior[i][r - 1]


def _sample_shifted(v, centers, s, dx):
    """v evaluated at centers + s by uniform cubic interpolation.

    The shift is the same for every center, so one Catmull-Rom weight
    set serves the whole slice.  Linear interpolation is not enough
    here: its O(dx^2) error on a curved value slice is a sawtooth in the
    sub-cell offset, which shows up as a spurious intensity-dependent
    bias in Nash-gap experiments.  Tails extend linearly (clamping would
    flatten the feedback in the outermost cells).
    """
    r = s / dx
    base = math.floor(r)
    f = r - base
    pad = abs(base) + 2
    left = v[0] + np.arange(-pad, 0) * (v[1] - v[0])
    right = v[-1] + np.arange(1, pad + 1) * (v[-1] - v[-2])
    ext = np.concatenate([left, v, right])
    i0 = pad + base  # index of the cell left of every query point
    p0 = ext[i0 - 1:i0 - 1 + v.size]
    p1 = ext[i0:i0 + v.size]
    p2 = ext[i0 + 1:i0 + 1 + v.size]
    p3 = ext[i0 + 2:i0 + 2 + v.size]
    return 0.5 * (2.0 * p1 + f * (p2 - p0 + f * (
        2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3 + f * (
            3.0 * (p1 - p2) + p3 - p0))))


def _tree_backward(model, tree, grid, leaf_densities, nu, shift_size,
                   workers=1):
    """One backward value sweep against frozen leaf laws.

    At each coarse junction the state jumps with the branch, so the
    children's values are sampled at the kicked positions before the
    equal-weight average; interval steps diffuse with nu (idiosyncratic
    only).  Returns (values, interval_ufields, feedback);
    interval_ufields[i][r] is the value gradient at the r-th fine left
    endpoint of internal node i's outgoing interval.
    """
    nx = grid.space.nx
    dx = grid.space.dx
    dt = grid.dt
    K = tree.substeps
    centers = grid.space.centers
    values = np.empty((tree.n_nodes, nx))
    interval_ufields = np.empty((tree.n_internal, K, nx))

    for j in tree.leaves():
        values[j] = model.cost.g(centers, leaf_densities[j - tree.n_internal])

    def sweep(i):
        lo, hi = tree.children(i)
        if shift_size:
            w = 0.5 * (_sample_shifted(values[lo], centers, -shift_size, dx)
                       + _sample_shifted(values[hi], centers, +shift_size,
                                         dx))
        else:
            w = 0.5 * (values[lo] + values[hi])
        grads = interval_ufields[i]
        for r in range(K):
            w = hjb_step(w, dt, nu, dx)
            grads[K - 1 - r] = spatial_gradient(w, dx)
        values[i] = w

    for level in range(tree.depth - 1, -1, -1):
        nodes = tree.level_nodes(level)
        if workers > 1 and len(nodes) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                for fut in [pool.submit(sweep, i) for i in nodes]:
                    fut.result()
        else:
            for i in nodes:
                sweep(i)

    feedback = np.empty_like(values)
    for j in range(tree.n_nodes):
        feedback[j] = -spatial_gradient(values[j], dx)
    return values, interval_ufields, feedback


def _tree_forward(tree, grid, layout, w0, interval_ufields, shift_size, nu):
    """Push the initial law through every branch under the given fields."""
    dt = grid.dt
    dx = grid.space.dx
    K = tree.substeps
    S = np.empty((layout.total, grid.space.nx))
    S[layout.node[0]] = w0
    for level in range(tree.depth):
        for i in tree.level_nodes(level):
            w = S[layout.node[i]]
            for r in range(K):
                w = fp_step(w, -interval_ufields[i][r], dt, nu, dx)
                if r < K - 1:
                    S[layout.interior[i][r]] = w
            S[layout.preshift[i]] = w
            lo, hi = tree.children(i)
            S[layout.node[lo]] = _shift_raw(w, -shift_size, dx)
            S[layout.node[hi]] = _shift_raw(w, +shift_size, dx)
    return S


def _validate_tree_setup(model: ModelSpec, tree: CommonNoiseTree,
                         grid: SpaceTimeGrid):
    problems = []
    if tree.horizon != grid.horizon or grid.horizon != model.horizon:
        problems.append(
            f"horizon mismatch: tree {tree.horizon}, grid {grid.horizon}, "
            f"model {model.horizon}")
    if tree.depth * tree.substeps != grid.nt:
        problems.append(
            f"depth*substeps = {tree.depth * tree.substeps} must equal "
            f"grid.nt = {grid.nt}")
    if model.initial_law.space != grid.space:
        problems.append("initial law lives on a different spatial grid")
    need = (1 << (tree.depth + 1)) * grid.space.nx
    if need > MEMORY_BUDGET_FLOATS:
        problems.append(
            f"node-density storage needs 2^(D+1)*nx = {need} floats "
            f"({need * 8 // 2**20} MiB); budget is {MEMORY_BUDGET_FLOATS}")
    if problems:
        raise ConfigurationError("; ".join(problems))


def solve_eps_mfg(model: ModelSpec, tree: CommonNoiseTree,
                  grid: SpaceTimeGrid, fp: FixedPointConfig = None,
                  workers: int = 1) -> TreeSolution:
    """Damped fixed point over the whole tree of conditional laws.

    Iterates backward value sweep (terminal cost against current leaf
    laws) and forward transport (feedback drift plus one common-noise
    translation per coarse step), mixing every stored density slice with
    the damping weight and stopping when the worst slice-wise transport
    distance falls under tol.
    """
    if fp is None:
        fp = FixedPointConfig()
    _validate_tree_setup(model, tree, grid)
    space = grid.space
    dt = grid.dt
    nu = 0.5 * model.sigma ** 2
    shift_size = model.eps * tree.increment
    w0 = model.initial_law.weights
    m0_mean = float(np.dot(w0, space.centers))
    _stability_guard(model, grid, nu, m0_mean)

    rows = zero_drift_flow(w0, grid.nt, dt, nu, space.dx)
    worst_edge = float(np.max(rows[:, 0] + rows[:, -1]))
    if worst_edge > 1e-8:
        raise ConfigurationError(
            f"domain too narrow: diffusion alone parks {worst_edge:.2e} "
            "mass in the wall cells (limit 1e-8); widen [xmin, xmax]")

    layout = _SliceLayout(tree)
    S = layout.fill_from_rows(tree, rows)
    dens = [GridDensity(space, row) for row in S]
    leaf_base = tree.n_internal
    lam = fp.damping
    history = []
    for _ in range(fp.max_iters):
        leaf_dens = dens[leaf_base:tree.n_nodes]
        _, interval_ufields, _ = _tree_backward(
            model, tree, grid, leaf_dens, nu, shift_size, workers)
        S_new = _tree_forward(tree, grid, layout, w0, interval_ufields,
                              shift_size, nu)
        mixed = (1.0 - lam) * S + lam * S_new
        new_dens = [GridDensity(space, row) for row in mixed]
        res = max(wasserstein2(a, b) for a, b in zip(new_dens, dens))
        history.append(res)
        S, dens = mixed, new_dens
        if res <= fp.tol:
            break
    else:
        raise ConvergenceError(
            f"no tree fixed point in {fp.max_iters} iterations "
            f"(last residual {history[-1]:.3e})",
            residual_history=np.asarray(history))

    leaf_dens = dens[leaf_base:tree.n_nodes]
    values, interval_ufields, feedback = _tree_backward(
        model, tree, grid, leaf_dens, nu, shift_size, workers)
    root_cost = _flow_quadrature_cost(model, tree, grid, layout, dens,
                                      interval_ufields)
    return TreeSolution(
        tree=tree, grid=grid,
        densities=tuple(dens[j] for j in range(tree.n_nodes)),
        values=values, feedback=feedback,
        interval_ufields=interval_ufields, root_cost=root_cost,
        residual_history=np.asarray(history),
        sigma=model.sigma, eps=model.eps)


def _flow_quadrature_cost(model, tree, grid, layout, dens, interval_ufields):
    """Probability-weighted grid quadrature of the equilibrium cost."""
    dt = grid.dt
    centers = grid.space.centers
    K = tree.substeps
    running = 0.0
    for level in range(tree.depth):
        p = 0.5 ** level
        for i in tree.level_nodes(level):
            uf = interval_ufields[i]
            for r in range(K):
                w = dens[layout.interval_slice(i, r)].weights
                running += p * dt * float(np.dot(w, 0.5 * uf[r] ** 2))
    terminal = 0.0
    p = tree.leaf_probability
    for j in tree.leaves():
        m = dens[layout.node[j]]
        terminal += p * float(np.dot(m.weights, model.cost.g(centers, m)))
    return running + terminal


# -- strategies and costs --------------------------------------------------


@dataclass(frozen=True)
class FeedbackStrategy:
    """Control alpha(node, x); optionally resolved per fine step.

    fields has one row per tree node.  fine, when present, has shape
    (n_internal, K, nx) and gives the control on each internal node's
    outgoing interval at fine resolution; without it the node's row is
    held constant over the interval.
    """

    fields: np.ndarray
    fine: np.ndarray = None

    @classmethod
    def from_solution(cls, sol: TreeSolution) -> "FeedbackStrategy":
        return cls(fields=sol.feedback, fine=-sol.interval_ufields)

    @classmethod
    def constant(cls, tree: CommonNoiseTree, grid: SpaceTimeGrid,
                 value: float) -> "FeedbackStrategy":
        return cls(fields=np.full((tree.n_nodes, grid.space.nx), value))

    def control_rows(self, i: int, K: int) -> np.ndarray:
        if self.fine is not None:
            return self.fine[i]
        return np.broadcast_to(self.fields[i], (K, self.fields.shape[1]))


@dataclass(frozen=True)
class OpenLoopStrategy:
    """Per-particle control paths, each particle riding one tree branch.

    noise, when given, supplies the individual standard-normal increments
    (n_particles x nt) instead of drawing them from rng_stream; controls
    built from observed noise stay adapted to it that way.
    """

    controls: np.ndarray
    x0: np.ndarray
    leaf_ids: np.ndarray
    rng_stream: int = 0
    noise: np.ndarray = None


def evaluate_cost(model: ModelSpec, flow, strategy) -> float:
    """Expected cost of a strategy against a frozen tree flow.

    flow is a TreeSolution or any object with .tree, .grid, .densities;
    only its leaf laws enter (through the terminal cost) plus its root law
    as the starting density.  Feedback strategies are evaluated by exact
    density transport and grid quadrature; open-loop ensembles by particle
    Monte-Carlo weighted with the branch probabilities.
    """
    tree, grid = flow.tree, flow.grid
    if isinstance(strategy, FeedbackStrategy):
        return _feedback_cost(model, tree, grid, flow, strategy)
    if isinstance(strategy, OpenLoopStrategy):
        return _open_loop_cost(model, tree, grid, flow, strategy)
    raise ConfigurationError(
        f"unknown strategy type {type(strategy).__name__}")


def _feedback_cost(model, tree, grid, flow, strategy):
    if strategy.fields.shape != (tree.n_nodes, grid.space.nx):
        raise ConfigurationError(
            f"feedback shape {strategy.fields.shape} does not match "
            f"(n_nodes, nx) = {(tree.n_nodes, grid.space.nx)}")
    if strategy.fine is not None and strategy.fine.shape != (
            tree.n_internal, tree.substeps, grid.space.nx):
        raise ConfigurationError(
            f"fine-field shape {strategy.fine.shape} does not match "
            f"(n_internal, K, nx)")
    dt = grid.dt
    dx = grid.space.dx
    nu = 0.5 * model.sigma ** 2
    K = tree.substeps
    centers = grid.space.centers
    shift_size = model.eps * tree.increment
    pushed = {0: flow.densities[0].weights}
    running = 0.0
    for level in range(tree.depth):
        p = 0.5 ** level
        for i in tree.level_nodes(level):
            w = pushed.pop(i)
            alpha = strategy.control_rows(i, K)
            for r in range(K):
                running += p * dt * float(np.dot(w, 0.5 * alpha[r] ** 2))
                w = fp_step(w, alpha[r], dt, nu, dx)
            lo, hi = tree.children(i)
            pushed[lo] = _shift_raw(w, -shift_size, dx)
            pushed[hi] = _shift_raw(w, +shift_size, dx)
    terminal = 0.0
    p = tree.leaf_probability
    for j in tree.leaves():
        m = flow.densities[j]
        terminal += p * float(np.dot(pushed[j], model.cost.g(centers, m)))
    return running + terminal


def _open_loop_cost(model, tree, grid, flow, strategy):
    controls = np.asarray(strategy.controls, dtype=float)
    x0 = np.asarray(strategy.x0, dtype=float)
    leaf_ids = np.asarray(strategy.leaf_ids)
    n = x0.shape[0]
    if controls.shape != (n, grid.nt):
        raise ConfigurationError(
            f"controls shape {controls.shape} does not match "
            f"(n_particles, nt) = {(n, grid.nt)}")
    if leaf_ids.shape != (n,):
        raise ConfigurationError("one leaf id per particle required")
    leaves = tree.leaves()
    present = set(int(j) for j in leaf_ids)
    if not all(int(j) in leaves for j in present):
        raise ConfigurationError("leaf ids must be leaf nodes of the tree")
    missing = [j for j in leaves if j not in present]
    if missing:
        raise ConfigurationError(
            f"open-loop ensemble leaves branches unsampled: nodes {missing}")

    # per-particle coarse increment signs along the assigned branch
    signs = np.empty((n, tree.depth))
    for row, leaf in enumerate(leaf_ids):
        branch = tree.branch_to(int(leaf))
        signs[row] = [tree.increment_sign(node) for node in branch[1:]]

    dt = grid.dt
    K = tree.substeps
    sqdt = math.sqrt(dt)
    if strategy.noise is not None:
        noise = np.asarray(strategy.noise, dtype=float)
        if noise.shape != (n, grid.nt):
            raise ConfigurationError(
                f"noise shape {noise.shape} does not match "
                f"(n_particles, nt) = {(n, grid.nt)}")
    else:
        rng = np.random.default_rng(strategy.rng_stream)
        noise = rng.standard_normal((n, grid.nt))
    x = x0.copy()
    for k in range(grid.nt):
        x = x + controls[:, k] * dt + model.sigma * sqdt * noise[:, k]
        if (k + 1) % K == 0:
            x = x + model.eps * tree.increment * signs[:, (k + 1) // K - 1]
    run = np.sum(0.5 * controls ** 2, axis=1) * dt
    total = np.zeros(n)
    for j in present:
        mask = leaf_ids == j
        total[mask] = run[mask] + model.cost.g(x[mask], flow.densities[j])
    p = tree.leaf_probability
    return float(sum(p * total[leaf_ids == j].mean() for j in leaves))


def best_response(model: ModelSpec, flow, grid: SpaceTimeGrid,
                  workers: int = 1):
    """Optimal value and feedback against a frozen tree flow.

    Single backward dynamic-programming sweep, no fixed point; the value
    is the initial-law quadrature of the root slice.
    """
    tree = flow.tree
    _validate_tree_setup(model, tree, grid)
    nu = 0.5 * model.sigma ** 2
    shift_size = model.eps * tree.increment
    leaf_dens = [flow.densities[j] for j in tree.leaves()]
    values, interval_ufields, feedback = _tree_backward(
        model, tree, grid, leaf_dens, nu, shift_size, workers)
    value = float(np.dot(model.initial_law.weights, values[0]))
    return value, FeedbackStrategy(fields=feedback, fine=-interval_ufields)


def sample_eps_paths(solution: TreeSolution, n_particles: int, rng_stream,
                     individual_noise: bool = True):
    """Euler simulation of particles riding one shared common-noise branch.

    Draws the branch first, then initial positions (inverse-CDF from the
    root law), then the per-particle Brownian increments, all from one
    seeded stream, so equal seeds give identical output.  Returns
    (X, Y, branch): state paths (n, nt+1), the value-gradient process
    read off the feedback field (n, nt+1), and the branch node ids.
    """
    if n_particles < 1:
        raise DomainError(f"need n_particles >= 1, got {n_particles}")
    tree = solution.tree
    grid = solution.grid
    K = tree.substeps
    dt = grid.dt
    sqdt = math.sqrt(dt)
    centers = grid.space.centers
    common_shift = solution.eps * tree.increment

    rng = np.random.default_rng(rng_stream)
    bits = rng.integers(0, 2, size=tree.depth)
    branch = [0]
    for b in bits:
        branch.append(tree.children(branch[-1])[int(b)])
    atoms = sample(solution.densities[0], n_particles, rng).atoms
    noise = (rng.standard_normal((n_particles, grid.nt))
             if individual_noise else np.zeros((n_particles, grid.nt)))

    sigma = solution.sigma
    X = np.empty((n_particles, grid.nt + 1))
    Y = np.empty((n_particles, grid.nt + 1))
    X[:, 0] = atoms
    for level in range(tree.depth):
        node = branch[level]
        grads = solution.interval_ufields[node]
        for r in range(K):
            k = level * K + r
            Y[:, k] = np.interp(X[:, k], centers, grads[r])
            X[:, k + 1] = (X[:, k] - Y[:, k] * dt
                           + sigma * sqdt * noise[:, k])
        child = branch[level + 1]
        X[:, (level + 1) * K] += common_shift * tree.increment_sign(child)
    leaf = branch[-1]
    Y[:, -1] = np.interp(X[:, -1], centers, -solution.feedback[leaf])
    return X, Y, np.asarray(branch)


# -- export ----------------------------------------------------------------


def save_tree_solution(solution: TreeSolution, directory) -> None:
    """JSON index plus one density CSV per node."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    tree = solution.tree
    nodes = []
    for j in range(tree.n_nodes):
        name = f"node_{j:04d}.csv"
        solution.densities[j].to_csv(out / name)
        nodes.append({
            "id": j,
            "level": tree.level_of(j),
            "time": tree.node_time(j),
            "increment_sign": tree.increment_sign(j),
            "density_csv": name,
        })
    index = {
        "depth": tree.depth,
        "substeps": tree.substeps,
        "horizon": tree.horizon,
        "coarse_dt": tree.coarse_dt,
        "leaf_probability": tree.leaf_probability,
        "grid": {
            "xmin": solution.grid.space.xmin,
            "xmax": solution.grid.space.xmax,
            "nx": solution.grid.space.nx,
            "nt": solution.grid.nt,
        },
        "root_cost": solution.root_cost,
        "residual_history": [float(r) for r in solution.residual_history],
        "nodes": nodes,
    }
    (out / "index.json").write_text(
        json.dumps(index, indent=2, sort_keys=True) + "\n")


def cost_report(model: ModelSpec, tree: CommonNoiseTree,
                grid: SpaceTimeGrid, cost: float, residual: float) -> dict:
    """Machine-readable record of one cost evaluation."""
    return {
        "model": type(model.cost).__name__,
        "sigma": model.sigma,
        "eps": model.eps,
        "depth": tree.depth,
        "substeps": tree.substeps,
        "nx": grid.space.nx,
        "cost": cost,
        "residual": residual,
    }
