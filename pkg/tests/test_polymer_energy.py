import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from charged_polymer.charge_models import example_family, gaussian, rademacher
from charged_polymer.lattice_walk import (Trajectory, WalkConfig, local_times, moves_to_coordinates,
                                          moves_to_keys, simulate_moves, simulate_walk)
from charged_polymer.polymer_energy import (PolymerSample, build_sample, energy, energy_literal, group_sites,
                                            level_sets, resampled_energy, resampled_field, zeta_sample)
from charged_polymer._rng import derive_rng


def test_hand_example():
    traj = Trajectory(np.array([[0, 0, 0], [0, 0, 0], [1, 0, 0]]))
    s = PolymerSample.from_arrays(traj, np.array([1, -1, 2]))
    e = energy(s)
    assert (e.H, e.X_check, e.Y) == (-2, 1, -3)
    assert energy_literal(s) == -2
    assert e.as_dict() == {"H": -2, "X_check": 1, "Y": -3}


def test_single_monomer():
    traj = Trajectory(np.zeros((1, 3), dtype=int))
    e = energy(PolymerSample.from_arrays(traj, np.array([1])))
    assert e.H == 0 and e.X_check == 0 and e.Y == 0


def test_charge_count_must_match():
    traj = simulate_walk(WalkConfig(3, 5, 1))
    with pytest.raises(ValueError):
        PolymerSample.from_arrays(traj, np.ones(4))


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 5), st.integers(1, 120), st.integers(0, 2**32), st.sampled_from(["g", "r", "e"]))
def test_decomposition_and_literal_sum(d, n, seed, which):
    dist = {"g": gaussian(), "r": rademacher(), "e": example_family()}[which]
    s = build_sample(simulate_walk(WalkConfig(d, n, seed)), dist, seed + 1)
    e = energy(s)
    lit = energy_literal(s)
    if which == "r":
        assert e.H == e.X_check + e.Y == lit
    else:
        scale = float(np.abs(s.charges).sum() ** 2) + 1
        assert abs(e.H - (e.X_check + e.Y)) <= 1e-12 * scale
        assert abs(e.H - lit) <= 1e-12 * scale


def test_rademacher_x_equals_h():
    s = build_sample(simulate_walk(WalkConfig(3, 300, 4)), rademacher(), 5)
    e = energy(s)
    assert e.Y == 0 and e.H == e.X_check


def test_group_sites_matches_per_sample_energy():
    d, n, rows = 3, 80, 50
    moves = simulate_moves(d, n - 1, rows, derive_rng(1))
    g = group_sites(moves_to_keys(moves, d))
    charges = rademacher().sample(derive_rng(2), (rows, n))
    x = g.x_check(charges)
    coords = moves_to_coordinates(moves, d)
    # charges are attached in grouped order, so rebuild the per-path assignment
    order = np.argsort(moves_to_keys(moves, d), axis=1, kind="stable")
    for r in range(rows):
        path_charges = np.empty(n, dtype=charges.dtype)
        path_charges[order[r]] = charges[r]
        e = energy(PolymerSample.from_arrays(Trajectory(coords[r]), path_charges))
        assert x[r] == e.X_check
    counts = g.per_row(g.counts)
    assert np.all(counts == n)
    mv = g.most_visited()
    assert np.all(g.counts[mv] == np.maximum.reduceat(g.counts, g.row_starts))
    assert np.all(g.row[g.origin_group] == np.arange(rows))


def test_resampled_field_laws():
    traj = simulate_walk(WalkConfig(3, 60, 3))
    lt = local_times(traj)
    q = resampled_field(lt, gaussian(), 9, size=50_000)
    assert q.shape == (50_000, len(lt))
    assert np.allclose(q.var(axis=0), lt.counts, rtol=0.05)
    one = resampled_field(lt, rademacher(), 9)
    assert one.shape == (len(lt),)
    assert np.all((one - lt.counts) % 2 == 0)
    x = resampled_energy(lt, gaussian(), 4, size=50_000)
    # E X = 0 and Var X = 2 sum l^2 for Gaussian charges
    assert abs(x.mean()) < 4 * math.sqrt(2 * np.sum(lt.counts**2) / x.size)
    assert x.var() == pytest.approx(2 * np.sum(lt.counts**2), rel=0.05)


def test_zeta_gaussian_is_chi_square():
    z = zeta_sample(gaussian(), 50, 3, size=100_000)
    for t in (0.5, 2.0, 5.0):
        p = stats.chi2.sf(t, 1)
        assert abs(np.mean(z > t) - p) < 4 * math.sqrt(p * (1 - p) / z.size)
    assert isinstance(zeta_sample(gaussian(), 5, 1), float)
    with pytest.raises(ValueError):
        zeta_sample(gaussian(), 0, 1)


def test_zeta_rademacher_bounded():
    z = zeta_sample(rademacher(), 9, 2, size=20_000)
    assert z.max() <= 9


def test_level_sets_structure():
    traj = simulate_walk(WalkConfig(3, 2000, 12))
    lt = local_times(traj)
    ls = level_sets(lt, 4.0, 64.0)
    assert ls.i0 == 2 and ls.N == 3
    assert ls.boundaries[0] <= 1 < ls.boundaries[1]
    assert ls.boundaries[-2] <= math.sqrt(64) / 4 < ls.boundaries[-1]
    assert np.all((ls.core_counts > 2) & (ls.core_counts < 32))
    # level sets are disjoint and cover every site with b_i0 <= l < b_{N+1}
    covered = sum(ls.level_counts)
    expected = np.sum((lt.counts >= ls.boundaries[0]) & (lt.counts < ls.boundaries[-1]))
    assert covered == expected


def test_level_sets_strict_core_and_errors():
    traj = Trajectory(np.array([[0, 0, 0]] * 4 + [[1, 0, 0]] * 2))
    lt = local_times(traj)
    # sqrt(xi)/A = 2 exactly: a site with l = 2 is excluded from the open core
    ls = level_sets(lt, 2.0, 16.0)
    assert ls.core_counts.tolist() == [4]
    with pytest.raises(ValueError):
        level_sets(lt, 1.0, 4.0)
    with pytest.raises(ValueError):
        level_sets(lt, 2.0, 0.0)


def test_level_sets_small_xi_has_no_levels():
    lt = local_times(simulate_walk(WalkConfig(3, 10, 1)))
    ls = level_sets(lt, 8.0, 1.0)
    assert ls.levels == [] and ls.boundaries.size == 0
