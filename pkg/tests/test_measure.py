"""Measure representations and the exact 1-D Wasserstein-2 distance."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfglab.errors import ConfigurationError, DomainError
from mfglab.measure import (
    EmpiricalMeasure,
    GridDensity,
    SpatialGrid,
    gaussian_grid,
    moments,
    project,
    sample,
    shift,
    wasserstein2,
)

from oracles import w2_coupling_lp


def unit_space(nx=100, lo=-5.0, hi=5.0):
    return SpatialGrid(lo, hi, nx)


def delta_on_grid(x0, space):
    # all mass in the cell containing x0
    w = np.zeros(space.nx)
    i = int(np.clip((x0 - space.xmin) / space.dx, 0, space.nx - 1))
    w[i] = 1.0
    return GridDensity(space, w)


# ---------------------------------------------------------------------------
# wasserstein2


def test_w2_point_masses():
    assert wasserstein2(EmpiricalMeasure([0.0]), EmpiricalMeasure([3.0])) == pytest.approx(3.0, abs=1e-14)


def test_w2_identity_is_exactly_zero():
    m = EmpiricalMeasure([0.3, -1.2, 4.0])
    assert wasserstein2(m, m) == 0.0
    space = unit_space()
    g = gaussian_grid(0.5, 1.0, space)
    assert wasserstein2(g, g) == 0.0


def test_w2_two_atom_pairs():
    # brute force over both couplings: sorted matching costs 1
    a = EmpiricalMeasure([0.0, 1.0])
    b = EmpiricalMeasure([1.0, 2.0])
    assert wasserstein2(a, b) == pytest.approx(1.0, abs=1e-12)
    assert wasserstein2(a, b) == pytest.approx(w2_coupling_lp([0, 1], [1, 2]), abs=1e-9)


def test_w2_against_lp_oracle_small_corpus():
    rng = np.random.default_rng(7)
    for _ in range(25):
        na, nb = rng.integers(1, 7, size=2)
        xa = rng.normal(0, 2, size=na)
        xb = rng.normal(0.5, 1.5, size=nb)
        got = wasserstein2(EmpiricalMeasure(xa), EmpiricalMeasure(xb))
        want = w2_coupling_lp(xa, xb)
        assert got == pytest.approx(want, abs=1e-9)


def test_w2_symmetry_is_exact():
    rng = np.random.default_rng(3)
    for _ in range(10):
        a = EmpiricalMeasure(rng.normal(size=rng.integers(1, 9)))
        b = EmpiricalMeasure(rng.normal(size=rng.integers(1, 9)))
        assert wasserstein2(a, b) == wasserstein2(b, a)


def test_w2_triangle_inequality():
    rng = np.random.default_rng(11)
    space = unit_space(64)
    for _ in range(30):
        ms = []
        for _ in range(3):
            if rng.random() < 0.5:
                ms.append(EmpiricalMeasure(rng.normal(0, 1.5, size=rng.integers(1, 7))))
            else:
                ms.append(gaussian_grid(rng.normal(), 0.3 + rng.random(), space))
        dab = wasserstein2(ms[0], ms[1])
        dbc = wasserstein2(ms[1], ms[2])
        dac = wasserstein2(ms[0], ms[2])
        assert dac <= dab + dbc + 1e-10


def test_w2_grid_mismatch_rejected():
    g1 = gaussian_grid(0, 1, SpatialGrid(-5, 5, 100))
    g2 = gaussian_grid(0, 1, SpatialGrid(-5, 5, 120))
    with pytest.raises(ConfigurationError):
        wasserstein2(g1, g2)


def test_w2_grid_vs_empirical_consistency():
    # a grid density refined far below the atom spacing converges to the atoms
    atoms = EmpiricalMeasure([-1.0, 0.25, 2.0])
    space = SpatialGrid(-4, 4, 4000)
    g = project(atoms, space)
    assert wasserstein2(g, atoms) < 2 * space.dx


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8),
       st.lists(st.floats(-50, 50), min_size=1, max_size=8))
@settings(max_examples=60, deadline=None)
def test_w2_empirical_matches_sorted_matching_when_sizes_equal(xs, ys):
    if len(xs) != len(ys):
        ys = (ys * len(xs))[:len(xs)]
    a, b = np.sort(xs), np.sort(ys)
    want = float(np.sqrt(np.mean((a - b) ** 2)))
    got = wasserstein2(EmpiricalMeasure(xs), EmpiricalMeasure(ys))
    assert got == pytest.approx(want, rel=1e-9, abs=1e-9)


# ---------------------------------------------------------------------------
# moments


def test_moments_point_mass():
    assert moments(EmpiricalMeasure([2.0])) == pytest.approx((2.0, 0.0, 4.0))


def test_moments_symmetric_atoms():
    assert moments(EmpiricalMeasure([-1.0, 1.0])) == pytest.approx((0.0, 1.0, 1.0))


def test_moments_projected_gaussian():
    g = gaussian_grid(1.0, 0.5, SpatialGrid(-5, 7, 600))
    mean, var, _ = moments(g)
    assert mean == pytest.approx(1.0, abs=1e-3)
    assert var == pytest.approx(0.25, abs=1e-3)


# ---------------------------------------------------------------------------
# project


def test_project_atom_at_center():
    space = unit_space(100)
    x0 = space.centers[37]
    g = project(EmpiricalMeasure([x0]), space)
    assert g.weights[37] == pytest.approx(1.0)
    assert np.sum(g.weights > 0) == 1


def test_project_atom_between_centers():
    space = unit_space(100)
    x0 = 0.5 * (space.centers[40] + space.centers[41])
    g = project(EmpiricalMeasure([x0]), space)
    assert g.weights[40] == pytest.approx(0.5, abs=1e-12)
    assert g.weights[41] == pytest.approx(0.5, abs=1e-12)


def test_project_mass_conserved():
    rng = np.random.default_rng(5)
    space = unit_space(200)
    g = project(EmpiricalMeasure(rng.normal(0, 1, 500)), space)
    assert abs(g.weights.sum() - 1.0) <= 1e-12


def test_project_monte_carlo_gaussian():
    rng = np.random.default_rng(12)
    space = SpatialGrid(-6, 6, 400)
    atoms = rng.normal(0, 1, 10_000)
    g = project(EmpiricalMeasure(atoms), space)
    exact = gaussian_grid(0, 1, space)
    assert wasserstein2(g, exact) <= 3e-2


def test_project_clamps_and_warns():
    space = SpatialGrid(-1, 1, 10)
    with pytest.warns(UserWarning, match="clamped"):
        g = project(EmpiricalMeasure([0.0, 5.0]), space)
    assert g.weights[-1] >= 0.5 - 1e-12


def test_project_all_outside_is_domain_error():
    with pytest.raises(DomainError):
        project(EmpiricalMeasure([10.0, 12.0]), SpatialGrid(-1, 1, 10))


# ---------------------------------------------------------------------------
# sample


def test_sample_point_mass_all_atoms_equal():
    space = unit_space(100)
    d = delta_on_grid(0.333, space)
    e = sample(d, 50, 123)
    assert np.all(e.atoms == e.atoms[0])


def test_sample_deterministic_per_seed():
    g = gaussian_grid(0, 1, unit_space(200))
    e1 = sample(g, 1000, 42)
    e2 = sample(g, 1000, 42)
    assert np.array_equal(e1.atoms, e2.atoms)
    e3 = sample(g, 1000, 43)
    assert not np.array_equal(e1.atoms, e3.atoms)


def test_sample_gaussian_variance():
    g = gaussian_grid(0, 1, SpatialGrid(-8, 8, 800))
    e = sample(g, 100_000, 2024)
    assert np.var(e.atoms) == pytest.approx(1.0, abs=0.02)


def test_project_sample_project_rate():
    # W2 error of the resampled projection shrinks like n^(-1/2)
    space = SpatialGrid(-6, 6, 300)
    g = gaussian_grid(0.3, 0.9, space)
    ns = [200, 800, 3200, 12800, 51200]
    errs = []
    for i, n in enumerate(ns):
        e = sample(g, n, 1000 + i)
        errs.append(wasserstein2(project(e, space), g))
    slope = np.polyfit(np.log(ns), np.log(errs), 1)[0]
    assert -0.8 <= slope <= -0.2


# ---------------------------------------------------------------------------
# shift


def test_shift_zero_is_bitwise_identity():
    g = gaussian_grid(0.5, 1.0, unit_space(128))
    s = shift(g, 0.0)
    assert np.array_equal(s.weights, g.weights)


def test_shift_one_cell_is_index_shift():
    space = unit_space(100)
    g = gaussian_grid(0.0, 0.5, space)
    s = shift(g, space.dx)
    assert np.allclose(s.weights[1:], g.weights[:-1], atol=1e-15)


def test_shift_round_trip_one_cell():
    space = unit_space(200)
    g = gaussian_grid(0.0, 0.4, space)
    back = shift(shift(g, space.dx), -space.dx)
    assert np.max(np.abs(back.weights - g.weights)) <= 1e-10


def test_shift_preserves_mass():
    g = gaussian_grid(0.2, 0.7, unit_space(150))
    for d in [0.013, -0.4, 1.2345]:
        assert abs(shift(g, d).weights.sum() - 1.0) <= 1e-12


def test_shift_too_large_rejected():
    g = gaussian_grid(0, 1, unit_space(100))
    with pytest.raises(DomainError):
        shift(g, 5.1)


@given(st.floats(-2.0, 2.0))
@settings(max_examples=40, deadline=None)
def test_shift_mass_conservation_property(shift_amount):
    g = gaussian_grid(0.0, 0.8, SpatialGrid(-5, 5, 90))
    s = shift(g, shift_amount)
    assert abs(s.weights.sum() - 1.0) <= 1e-12


# ---------------------------------------------------------------------------
# type invariants


def test_grid_density_rejects_negative_weights():
    space = unit_space(4)
    with pytest.raises(DomainError):
        GridDensity(space, [0.5, 0.6, -0.1, 0.0])


def test_grid_density_rejects_bad_total():
    space = unit_space(4)
    with pytest.raises(DomainError):
        GridDensity(space, [0.5, 0.6, 0.0, 0.0])


def test_grid_density_clips_tiny_negatives():
    space = unit_space(3)
    g = GridDensity(space, [0.5, 0.5 + 1e-13, -1e-13])
    assert np.all(g.weights >= 0.0)
    assert g.weights.sum() == pytest.approx(1.0, abs=1e-15)


def test_empirical_measure_rejects_empty_and_nan():
    with pytest.raises(DomainError):
        EmpiricalMeasure([])
    with pytest.raises(DomainError):
        EmpiricalMeasure([np.nan])


def test_measures_are_immutable():
    g = gaussian_grid(0, 1, unit_space(10))
    with pytest.raises((AttributeError, ValueError)):
        g.weights = np.ones(10)
    with pytest.raises(ValueError):
        g.weights[0] = 2.0


def test_csv_round_trip(tmp_path):
    g = gaussian_grid(0.1, 0.8, unit_space(60))
    p = tmp_path / "d.csv"
    g.to_csv(p)
    back = GridDensity.from_csv(p)
    assert np.array_equal(back.weights, g.weights)
    e = EmpiricalMeasure([0.5, -1.25, 3.0])
    pe = tmp_path / "e.csv"
    e.to_csv(pe)
    assert np.array_equal(EmpiricalMeasure.from_csv(pe).atoms, e.atoms)
