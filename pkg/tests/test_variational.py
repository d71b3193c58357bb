"""Linear perturbation ensemble: exact symmetries, moment bands, tree checks."""

import math
from dataclasses import replace
from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfglab.errors import ConfigurationError, DomainError
from mfglab.eps_tree import CommonNoiseTree, best_response, evaluate_cost, solve_eps_mfg
from mfglab.lq_oracle import solve_riccati
from mfglab.measure import gaussian_grid, sample
from mfglab.mfg0 import FixedPointConfig, SpaceTimeGrid, solve_mfg0
from mfglab.model import AnharmonicCost, LQCost, ModelSpec
from mfglab.variational import (
    VariationalEnsemble,
    build_correction_strategy,
    cross_validate_vs_tree,
    ensemble_csv,
    enumerate_branch_increments,
    gaussianity_diagnostics,
    sample_branch_increments,
    solve_variational,
)

TOL = FixedPointConfig(tol=5e-8)


def make_model(grid, cost, eps=0.0):
    m0 = gaussian_grid(1.0, 0.5, grid.space)
    return ModelSpec(sigma=0.5, eps=eps, horizon=grid.horizon,
                     initial_law=m0, cost=cost)


@lru_cache(maxsize=None)
def big_lq():
    """Closed-form ensemble wide enough for stable moment statistics."""
    grid = SpaceTimeGrid(-3.5, 5.5, 200, 100, 1.0)
    model = make_model(grid, LQCost(q=1.0, kappa=0.5))
    flat = solve_mfg0(model, grid, fp=TOL)
    ens = solve_variational(model, flat, n_particles=8, n_common=2000,
                            mode="lq_closed_form", rng_stream=42)
    return model, grid, flat, ens


@lru_cache(maxsize=None)
def lq_pair():
    """Small ensemble plus its mirror built from negated increments."""
    model, grid, flat, _ = big_lq()
    ens = solve_variational(model, flat, n_particles=8, n_common=200,
                            mode="lq_closed_form", rng_stream=7)
    mirror = solve_variational(model, flat, n_particles=8, n_common=200,
                               mode="lq_closed_form", rng_stream=7,
                               wtilde=-ens.wtilde)
    return ens, mirror


@lru_cache(maxsize=None)
def an_setup():
    grid = SpaceTimeGrid(-3.5, 5.5, 150, 30, 1.0)
    model = make_model(grid, AnharmonicCost(c=0.5, kappa=0.5))
    flat = solve_mfg0(model, grid, fp=TOL)
    tree = CommonNoiseTree(depth=3, substeps=10, horizon=1.0)
    wt, leaves = sample_branch_increments(tree, grid, 2, 3)
    return model, grid, flat, tree, wt, leaves


@lru_cache(maxsize=None)
def an_ensemble():
    model, grid, flat, tree, wt, _ = an_setup()
    return solve_variational(model, flat, n_particles=60, n_common=2,
                             mode="subgame_fd", rng_stream=11, wtilde=wt)


@lru_cache(maxsize=None)
def an_solution(eps):
    model, grid, _, tree, _, _ = an_setup()
    noisy = make_model(grid, model.cost, eps=eps)
    return solve_eps_mfg(noisy, tree, grid, fp=TOL)


@lru_cache(maxsize=None)
def lq_on_tree_grid():
    """LQ flat solve, eps=0.1 equilibrium, and enumerated-branch ensemble."""
    _, grid, _, tree, _, _ = an_setup()
    model = make_model(grid, LQCost(q=1.0, kappa=0.5))
    flat = solve_mfg0(model, grid, fp=TOL)
    sol = solve_eps_mfg(make_model(grid, model.cost, eps=0.1), tree, grid,
                        fp=TOL)
    wt, leaves = enumerate_branch_increments(tree, grid)
    ens = solve_variational(model, flat, n_particles=30, n_common=8,
                            mode="lq_closed_form", rng_stream=5, wtilde=wt)
    return model, grid, flat, tree, sol, wt, leaves, ens


# -- construction and validation -------------------------------------------


def test_shape_problems_reported_together():
    nt1 = 5
    with pytest.raises(ConfigurationError) as exc:
        VariationalEnsemble(times=np.zeros(nt1),
                            X0paths=np.zeros((3, nt1)),
                            alpha0=np.zeros((3, nt1)),
                            U=np.zeros((2, 3, nt1)),
                            V=np.zeros((2, 3, nt1 - 1, 1)),
                            wtilde=np.zeros((2, 3)))
    assert len(exc.value.problems) == 2
    assert any("V shape" in p for p in exc.value.problems)
    assert any("wtilde shape" in p for p in exc.value.problems)


def test_nonzero_start_rejected():
    nt1 = 4
    U = np.zeros((2, 3, nt1))
    U[1, 0, 0] = 1e-30
    with pytest.raises(ConfigurationError, match="exactly zero"):
        VariationalEnsemble(times=np.zeros(nt1), X0paths=np.zeros((3, nt1)),
                            alpha0=np.zeros((3, nt1)), U=U,
                            V=np.zeros((2, 3, nt1)), wtilde=np.zeros((2, 3)))


def test_solver_argument_validation():
    model, grid, flat, _ = big_lq()
    an_model = make_model(grid, AnharmonicCost(c=0.5, kappa=0.5))
    with pytest.raises(ConfigurationError, match="mode"):
        solve_variational(model, flat, mode="closed_form")
    with pytest.raises(DomainError):
        solve_variational(model, flat, n_particles=0)
    with pytest.raises(DomainError):
        solve_variational(model, flat, n_common=0)
    with pytest.raises(DomainError):
        solve_variational(model, flat, eta_substeps=0)
    with pytest.raises(ConfigurationError, match="LQ terminal cost"):
        solve_variational(an_model, flat, mode="lq_closed_form")
    with pytest.raises(ConfigurationError, match="wtilde shape"):
        solve_variational(model, flat, n_common=4,
                          wtilde=np.zeros((4, grid.nt + 1)))


def test_ensemble_layout():
    _, grid, _, ens = big_lq()
    assert ens.n_common == 2000 and ens.n_particles == 8
    assert ens.U.shape == ens.V.shape == (2000, 8, grid.nt + 1)
    assert ens.X0paths.shape == ens.alpha0.shape == (8, grid.nt + 1)
    assert np.array_equal(ens.times, grid.times)
    assert not np.any(ens.U[:, :, 0])


def test_determinism():
    model, grid, flat, _ = big_lq()
    a = solve_variational(model, flat, n_particles=5, n_common=20,
                          mode="lq_closed_form", rng_stream=13)
    b = solve_variational(model, flat, n_particles=5, n_common=20,
                          mode="lq_closed_form", rng_stream=13)
    assert np.array_equal(a.U, b.U) and np.array_equal(a.V, b.V)
    assert np.array_equal(a.X0paths, b.X0paths)
    assert np.array_equal(a.wtilde, b.wtilde)


# -- flat path layer --------------------------------------------------------


def test_flat_paths_ride_flat_feedback():
    model, grid, flat, ens = big_lq()
    centers = grid.space.centers
    A = np.empty_like(ens.alpha0)
    for k in range(grid.nt + 1):
        A[:, k] = -np.interp(ens.X0paths[:, k], centers, flat.ufield[k])
    assert np.array_equal(A, ens.alpha0)


def test_individual_noise_recovers_the_draws():
    model, grid, flat, ens = big_lq()
    rng = np.random.default_rng(42)
    x0 = sample(model.initial_law, 8, rng).atoms
    xi = rng.standard_normal((8, grid.nt))
    assert np.array_equal(ens.X0paths[:, 0], x0)
    rebuilt = (ens.X0paths[:, 1:] - ens.X0paths[:, :-1]
               - ens.alpha0[:, :-1] * grid.dt) / (0.5 * math.sqrt(grid.dt))
    assert np.max(np.abs(rebuilt - xi)) < 1e-10


# -- degenerate increments --------------------------------------------------


def test_zero_increments_collapse_to_zero():
    model, grid, flat, _, _, _ = an_setup()
    ens = solve_variational(model, flat, n_particles=5, n_common=3,
                            mode="subgame_fd", rng_stream=2,
                            wtilde=np.zeros((3, grid.nt)))
    assert not np.any(ens.U) and not np.any(ens.V)
    rep = gaussianity_diagnostics(ens, [0.5, 1.0], mirror=ens)
    assert rep["degenerate"] is True
    assert rep["antisymmetry_max_abs"] == 0.0
    for probe in rep["probes"]:
        for p in probe["particles"]:
            assert p["mean_u"] == 0.0 and p["mean_v"] == 0.0
            assert p["jarque_bera_u"] == 0.0


# -- closed-form route ------------------------------------------------------


def test_terminal_variance_matches_closed_form():
    # Var U_T = T / (1 + q(1-kappa)T) = 2/3 at q=1, kappa=0.5, T=1
    _, _, _, ens = big_lq()
    assert abs(np.var(ens.U[:, 0, -1]) - 2.0 / 3.0) < 0.05


def test_no_cross_particle_scatter_in_lq():
    # gamma is spatially constant, so every particle sees the same (U, V)
    _, _, _, ens = big_lq()
    assert np.max(np.var(ens.U, axis=1)) < 1e-10
    assert np.max(np.var(ens.V, axis=1)) < 1e-10


def test_subgame_route_agrees_with_closed_form():
    _, grid, _, tree, wt, _ = an_setup()
    model = make_model(grid, LQCost(q=1.0, kappa=0.5))
    flat = solve_mfg0(model, grid, fp=TOL)
    closed = solve_variational(model, flat, n_particles=60, n_common=2,
                               mode="lq_closed_form", rng_stream=11, wtilde=wt)
    fd = solve_variational(model, flat, n_particles=60, n_common=2,
                           mode="subgame_fd", rng_stream=11, wtilde=wt)
    assert np.max(np.abs(fd.U - closed.U)) < 1e-2
    assert np.max(np.abs(fd.V - closed.V)) < 1e-2


# -- exact symmetries -------------------------------------------------------


def test_increment_scaling_exact():
    model, grid, flat, _ = big_lq()
    ens, _ = lq_pair()
    for c in (-1.0, 2.0):
        scaled = solve_variational(model, flat, n_particles=8, n_common=200,
                                   mode="lq_closed_form", rng_stream=7,
                                   wtilde=c * ens.wtilde)
        assert np.array_equal(scaled.U, c * ens.U)
        assert np.array_equal(scaled.V, c * ens.V)


def test_antisymmetry_exact():
    ens, mirror = lq_pair()
    assert np.array_equal(mirror.U, -ens.U)
    assert np.array_equal(mirror.V, -ens.V)
    assert np.array_equal(mirror.X0paths, ens.X0paths)


@settings(max_examples=20, deadline=None)
@given(sign=st.sampled_from([-1.0, 1.0]), power=st.integers(-3, 3))
def test_binary_scaling_group_exact(sign, power):
    # multiplying increments by +-2^k commutes with every rounding step
    model, grid, flat, _ = big_lq()
    base, _ = lq_pair()
    c = sign * 2.0 ** power
    scaled = solve_variational(model, flat, n_particles=8, n_common=200,
                               mode="lq_closed_form", rng_stream=7,
                               wtilde=c * base.wtilde)
    assert np.array_equal(scaled.U, c * base.U)
    assert np.array_equal(scaled.V, c * base.V)


# -- moment diagnostics -----------------------------------------------------


def test_moment_bands_hold_across_probes():
    _, _, _, ens = big_lq()
    rep = gaussianity_diagnostics(ens, [0.25, 0.5, 1.0])
    assert rep["n_common"] == 2000 and rep["degenerate"] is False
    assert rep["skew_band"] == 5.0 * math.sqrt(6.0 / 2000)
    assert rep["kurt_band"] == 5.0 * math.sqrt(24.0 / 2000)
    assert [p["t"] for p in rep["probes"]] == [0.25, 0.5, 1.0]
    for probe in rep["probes"]:
        assert len(probe["particles"]) == 8
        for p in probe["particles"]:
            if probe["index"] > 0:
                assert abs(p["mean_u"]) <= 3.0 * p["se_u"]
                assert abs(p["mean_v"]) <= 3.0 * p["se_v"]
            assert abs(p["skew_u"]) <= rep["skew_band"]
            assert abs(p["skew_v"]) <= rep["skew_band"]
            assert abs(p["kurt_u"]) <= rep["kurt_band"]
            assert abs(p["kurt_v"]) <= rep["kurt_band"]
            assert p["jarque_bera_u"] >= 0.0
            assert math.isfinite(p["jarque_bera_v"])


def test_diagnostics_rejects_thin_or_misaligned_input():
    ens, mirror = lq_pair()
    with pytest.raises(DomainError, match="500 common paths"):
        gaussianity_diagnostics(ens, [0.5])
    _, _, _, big = big_lq()
    with pytest.raises(DomainError, match="not on the grid"):
        gaussianity_diagnostics(big, [0.333])
    bad_w = replace(big, wtilde=2.0 * big.wtilde)
    with pytest.raises(ConfigurationError, match="negated increments"):
        gaussianity_diagnostics(big, [0.5], mirror=bad_w)
    bad_x = replace(big, wtilde=-big.wtilde, X0paths=big.X0paths + 1.0)
    with pytest.raises(ConfigurationError, match="same stream"):
        gaussianity_diagnostics(big, [0.5], mirror=bad_x)


# -- terminal coupling and fd robustness ------------------------------------


def test_terminal_slice_satisfies_terminal_condition():
    model, grid, flat, _, _, _ = an_setup()
    ens = an_ensemble()
    x = ens.X0paths[:, -1]
    m_T = flat.flow[grid.nt]
    c2 = model.cost.gxx(x, m_T)
    worst = 0.0
    for m in range(ens.n_common):
        U_T = ens.U[m, :, -1]
        mean_term = np.array([np.mean(model.cost.gxm(xi, m_T, x) * U_T)
                              for xi in x])
        worst = max(worst, float(np.max(np.abs(
            ens.V[m, :, -1] - (c2 * U_T + mean_term)))))
    assert worst < 5e-2


def test_halving_fd_delta_barely_moves_v():
    model, grid, flat, _, wt, _ = an_setup()
    coarse = solve_variational(model, flat, n_particles=60, n_common=2,
                               mode="subgame_fd", rng_stream=11,
                               eta_substeps=5, wtilde=wt)
    fine = solve_variational(model, flat, n_particles=60, n_common=2,
                             mode="subgame_fd", rng_stream=11,
                             eta_substeps=5, wtilde=wt, fd_delta=5e-3)
    assert np.max(np.abs(fine.V - coarse.V)) < 2e-2


# -- corrected strategy -----------------------------------------------------


def test_zero_intensity_correction_is_flat_feedback():
    ens = an_ensemble()
    beta = build_correction_strategy(ens, 0.0).controls()
    assert np.array_equal(
        beta, np.broadcast_to(ens.alpha0, beta.shape))
    with pytest.raises(DomainError):
        build_correction_strategy(ens, -0.1)


def test_correction_linear_in_intensity():
    # the correction term is exactly linear in the intensity: doubling eps
    # doubles it bitwise (radix-2 scaling commutes with rounding), so no
    # second-order term can hide in the builder
    ens = an_ensemble()
    base = ens.alpha0[None, :, :]
    large = build_correction_strategy(ens, 0.2).controls()
    assert np.array_equal(large, base - 2.0 * (0.1 * ens.V))
    half = build_correction_strategy(ens, 0.05).controls()
    assert np.array_equal(half, base - 0.5 * (0.1 * ens.V))


def test_lq_correction_matches_expansion():
    # beta = -(a(t)(X0 + eps U) + b(t)(mean flow + eps mean U)) + O(eps^2),
    # and the LQ expansion is exact so only integration error remains
    model, grid, flat, _ = big_lq()
    ens, _ = lq_pair()
    ric = solve_riccati(1.0, 0.5, 1.0, grid.nt)
    from mfglab.measure import mean_of
    flow_mean = np.array([mean_of(d) for d in flat.flow])
    beta = build_correction_strategy(ens, 0.1).controls()
    worst = 0.0
    for k in range(grid.nt + 1):
        xe = ens.X0paths[None, :, k] + 0.1 * ens.U[:, :, k]
        me = flow_mean[k] + 0.1 * ens.U[:, :, k].mean(axis=1, keepdims=True)
        ref = -(ric.a[k] * xe + ric.b[k] * me)
        worst = max(worst, float(np.max(np.abs(beta[:, :, k] - ref))))
    assert worst < 1e-2


def test_open_loop_packaging_and_cost():
    model, grid, flat, tree, sol, wt, leaves, ens = lq_on_tree_grid()
    noisy = make_model(grid, model.cost, eps=0.1)
    strat = build_correction_strategy(ens, 0.1)
    ol = strat.open_loop(sol, noisy.sigma)
    assert ol.controls.shape == (8 * 30, grid.nt)
    assert np.array_equal(ol.x0, np.tile(ens.X0paths[:, 0], 8))
    assert np.array_equal(ol.leaf_ids, np.repeat(leaves, 30))
    assert ol.noise.shape == (8 * 30, grid.nt)
    assert np.array_equal(ol.noise[:30], ol.noise[30:60])
    cost = evaluate_cost(noisy, sol, ol)
    value, _ = best_response(noisy, sol, grid)
    # deterministic draw: the corrected strategy sits above the optimum
    assert 0.0 < value < cost < value + 0.2


# -- cross-validation against tree paths ------------------------------------


def test_lq_remainder_sits_at_the_floor():
    model, grid, flat, tree, sol, wt, leaves, _ = lq_on_tree_grid()
    ens = solve_variational(model, flat, n_particles=60, n_common=2,
                            mode="lq_closed_form", rng_stream=11,
                            wtilde=sample_branch_increments(tree, grid, 2, 3)[0])
    rep = cross_validate_vs_tree(ens, sol)
    assert rep["x_remainder"] < 1e-4
    assert rep["y_remainder"] < 1e-3
    assert rep["eps"] == 0.1 and rep["n_common"] == 2
    assert len(rep["x_per_path"]) == 2


def test_remainder_quarters_per_intensity_halving():
    ens = an_ensemble()
    rems = [cross_validate_vs_tree(ens, an_solution(eps))["x_remainder"]
            for eps in (0.4, 0.2, 0.1)]
    for hi, lo in zip(rems, rems[1:]):
        assert 2.5 < hi / lo < 6.5
    floor = cross_validate_vs_tree(ens, an_solution(0.001))["x_remainder"]
    assert floor < rems[-1] / 2.0


def test_cross_validation_rejects_mismatches():
    ens = an_ensemble()
    model, grid, _, tree, wt, _ = an_setup()
    with pytest.raises(ConfigurationError, match="floor runs"):
        cross_validate_vs_tree(ens, an_solution(0.0))
    rng = np.random.default_rng(0)
    loose = replace(ens, wtilde=rng.standard_normal(ens.wtilde.shape))
    with pytest.raises(ConfigurationError, match="not a replay"):
        cross_validate_vs_tree(loose, an_solution(0.1))
    stretched = replace(ens, wtilde=1.1 * ens.wtilde)
    with pytest.raises(ConfigurationError, match="not a replay"):
        cross_validate_vs_tree(stretched, an_solution(0.1))
    shifted = replace(ens, times=ens.times + 0.5)
    with pytest.raises(ConfigurationError, match="time grid"):
        cross_validate_vs_tree(shifted, an_solution(0.1))


# -- branch increment helpers -----------------------------------------------


def test_sampled_increments_replay_the_tree():
    from mfglab.variational import branch_leaves
    _, grid, _, tree, wt, leaves = an_setup()
    K = tree.substeps
    kicks = wt[:, K - 1::K]
    assert np.all(np.abs(np.abs(kicks) - tree.increment) < 1e-15)
    quiet = wt.copy()
    quiet[:, K - 1::K] = 0.0
    assert not np.any(quiet)
    assert np.array_equal(branch_leaves(an_ensemble(), tree, grid), leaves)
    assert all(tree.level_of(int(leaf)) == tree.depth for leaf in leaves)


def test_enumeration_covers_every_leaf():
    _, grid, _, tree, _, _ = an_setup()
    wt, leaves = enumerate_branch_increments(tree, grid, copies=2)
    assert wt.shape == (2 * tree.n_leaves, grid.nt)
    assert np.array_equal(leaves, np.repeat(np.array(tree.leaves()), 2))


def test_increment_builder_rejects_grid_mismatch():
    _, grid, _, _, _, _ = an_setup()
    tall = CommonNoiseTree(depth=4, substeps=10, horizon=1.0)
    with pytest.raises(ConfigurationError, match="depth\\*substeps"):
        sample_branch_increments(tall, grid, 4, 0)


# -- export -----------------------------------------------------------------


def test_csv_layout_round_trips():
    ens = an_ensemble()
    text = ensemble_csv(ens)
    lines = text.strip().split("\n")
    assert lines[0] == "path,particle,t,x0,u,v"
    nt1 = ens.times.size
    assert len(lines) == 1 + ens.n_common * ens.n_particles * nt1
    m, j, k = 1, 2, 3
    row = lines[1 + (m * ens.n_particles + j) * nt1 + k].split(",")
    assert int(row[0]) == m and int(row[1]) == j
    assert float(row[2]) == ens.times[k]
    assert float(row[3]) == ens.X0paths[j, k]
    assert float(row[4]) == ens.U[m, j, k]
    assert float(row[5]) == ens.V[m, j, k]
