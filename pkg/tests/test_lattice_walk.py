import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import gamma as G

from charged_polymer.errors import NonConvergenceError
from charged_polymer.lattice_walk import (LatticeConstants, Trajectory, WalkConfig, first_return_times,
                                          green_constants, local_times, moves_to_coordinates, moves_to_keys,
                                          return_probability_mc, simulate_moves, simulate_walk, step_table,
                                          truncation_allowance)
from charged_polymer._rng import derive_rng


def watson_green_lazy_3d():
    # closed form for the simple walk on Z^3; the lazy walk spends 7/6 as long at each visit
    simple = math.sqrt(6) / (32 * math.pi**3) * G(1 / 24) * G(5 / 24) * G(7 / 24) * G(11 / 24)
    return 7 / 6 * simple


def taboo_return_probability(d, horizon):
    """Exact P(first return to 0 within ``horizon``) by propagating mass that has not returned."""
    size = 2 * horizon + 3
    mass = np.zeros((size,) * d)
    origin = (horizon + 1,) * d
    mass[origin] = 1.0
    returned = 0.0
    for _ in range(horizon):
        new = mass.copy()
        for ax in range(d):
            new += np.roll(mass, 1, axis=ax) + np.roll(mass, -1, axis=ax)
        mass = new / (2 * d + 1)
        returned += mass[origin]
        mass[origin] = 0.0
    return returned


def test_green_matches_closed_form_in_three_dimensions():
    c = green_constants(3)
    assert c.green_at_origin == pytest.approx(watson_green_lazy_3d(), abs=1e-9)


def test_derived_constants_relations():
    c = green_constants(3)
    assert c.c_d == pytest.approx(c.green_at_origin - 1, abs=1e-15)
    assert c.return_probability == pytest.approx(1 - 1 / c.green_at_origin, abs=1e-15)
    assert c.chi_d == pytest.approx(-math.log(c.return_probability), abs=1e-15)
    assert set(c.as_dict()) >= {"G", "c_d", "return_probability", "chi_d"}


@pytest.mark.parametrize("d, chi", [(3, 0.83299268), (4, 1.26285294), (5, 1.54272019), (6, 1.75109633)])
def test_chi_values(d, chi):
    assert green_constants(d).chi_d == pytest.approx(chi, abs=1e-7)


def test_chi_increases_with_dimension():
    chis = [green_constants(d).chi_d for d in range(3, 9)]
    assert np.all(np.diff(chis) > 0)


@pytest.mark.parametrize("d", [3, 4])
def test_torus_cubature_agrees_with_bessel_route(d):
    a = green_constants(d, tol=1e-10)
    b = green_constants(d, tol=1e-6, method="torus")
    assert abs(a.green_at_origin - b.green_at_origin) < 1e-6


def test_refinement_is_stable():
    assert abs(green_constants(3, tol=1e-7).chi_d - green_constants(3, tol=1e-12).chi_d) < 1e-6


def test_green_nonconvergence_carries_best_estimate():
    # the direct cubature cannot refine far in five dimensions within its node budget
    with pytest.raises(NonConvergenceError) as info:
        green_constants(5, tol=1e-8, method="torus")
    best = info.value.best
    assert isinstance(best, LatticeConstants)
    assert best.green_at_origin == pytest.approx(green_constants(5).green_at_origin, rel=1e-2)


def test_torus_error_estimate_is_honest():
    exact = watson_green_lazy_3d()
    for tol in (1e-6, 1e-9):
        c = green_constants(3, tol=tol, method="torus")
        assert abs(c.green_at_origin - exact) <= tol


@pytest.mark.parametrize("d", [0, 1, 2])
def test_recurrent_dimensions_rejected(d):
    with pytest.raises(ValueError, match="d >= 3"):
        green_constants(d)
    with pytest.raises(ValueError):
        WalkConfig(d, 10, 1)


def test_bad_method_and_tol():
    with pytest.raises(ValueError):
        green_constants(3, method="magic")
    with pytest.raises(ValueError):
        green_constants(3, tol=0)


def test_first_returns_against_exact_taboo_probability():
    exact = taboo_return_probability(3, 30)
    assert exact == pytest.approx(0.38644, abs=1e-5)
    times = first_return_times(3, 30, 200_000, seed=11)
    p = np.mean(times > 0)
    se = math.sqrt(p * (1 - p) / times.size)
    assert abs(p - exact) < 4 * se


def test_first_return_time_distribution_against_taboo_recursion():
    # P(tau = 1) is the holding probability
    times = first_return_times(4, 5, 100_000, seed=3)
    p1 = np.mean(times == 1)
    assert abs(p1 - 1 / 9) < 4 * math.sqrt(p1 * (1 - p1) / times.size)
    exact2 = taboo_return_probability(4, 2) - 1 / 9
    p2 = np.mean(times == 2)
    assert abs(p2 - exact2) < 4 * math.sqrt(p2 * (1 - p2) / times.size)


def test_mc_return_frequency_within_truncation_band():
    c = green_constants(3)
    est = return_probability_mc(3, 2000, 50_000, seed=5)
    gap = c.return_probability - est.estimate
    assert -3 * est.stderr <= gap <= 3 * est.stderr + truncation_allowance(3, 2000)


def test_truncation_allowance_shrinks_with_horizon():
    assert truncation_allowance(3, 10_000) == pytest.approx(0.00833, abs=5e-5)
    assert truncation_allowance(3, 100) > truncation_allowance(3, 10_000)
    assert truncation_allowance(5, 100) < truncation_allowance(3, 100)


def test_first_returns_independent_of_workers_and_reproducible():
    a = first_return_times(3, 500, 5000, seed=9, chunk=1000)
    b = first_return_times(3, 500, 5000, seed=9, chunk=1000, workers=3)
    c = first_return_times(3, 500, 5000, seed=10, chunk=1000)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_seed_required():
    with pytest.raises(ValueError, match="seed"):
        first_return_times(3, 10, 10, seed=None)


def test_step_table_and_coordinates():
    t = step_table(3)
    assert t.shape == (7, 3)
    assert np.abs(t).sum() == 6
    moves = np.array([[1, 1, 6, 0, 2]], dtype=np.uint8)
    coords = moves_to_coordinates(moves, 3)[0]
    assert coords.tolist() == [[0, 0, 0], [1, 0, 0], [2, 0, 0], [2, 0, 0], [1, 0, 0], [1, -1, 0]]


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 5), st.integers(1, 60), st.integers(0, 2**32))
def test_keys_identify_sites(d, steps, seed):
    moves = simulate_moves(d, steps, 4, derive_rng(seed))
    keys = moves_to_keys(moves, d)
    coords = moves_to_coordinates(moves, d)
    assert np.all(keys[:, 0] == 0)
    for row in range(4):
        _, a = np.unique(coords[row], axis=0, return_inverse=True)
        _, b = np.unique(keys[row], return_inverse=True)
        # same partition of positions into sites
        assert np.array_equal(a.reshape(-1)[:, None] == a.reshape(-1)[None, :],
                              b[:, None] == b[None, :])


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 6), st.integers(1, 300), st.integers(0, 2**32))
def test_walks_are_lazy_nearest_neighbour_paths(d, n, seed):
    traj = simulate_walk(WalkConfig(d, n, seed))
    assert traj.sites.shape == (n, d)
    assert np.all(traj.sites[0] == 0)
    assert np.all(np.abs(np.diff(traj.sites, axis=0)).sum(axis=1) <= 1)
    lt = local_times(traj)
    assert lt.total == n


def test_simulate_walk_reproducible():
    a = simulate_walk(WalkConfig(3, 100, 42))
    b = simulate_walk(WalkConfig(3, 100, 42))
    assert np.array_equal(a.sites, b.sites)


def test_move_frequencies_uniform():
    moves = simulate_moves(3, 1000, 100, derive_rng(1)).reshape(-1)
    freq = np.bincount(moves, minlength=7) / moves.size
    assert np.allclose(freq, 1 / 7, atol=4 * math.sqrt(1 / 7 * 6 / 7 / moves.size))


def test_local_times_example():
    traj = Trajectory(np.array([[0, 0, 0], [0, 0, 0], [1, 0, 0], [0, 0, 0]]))
    lt = local_times(traj)
    assert lt[(0, 0, 0)] == 3 and lt[(1, 0, 0)] == 1 and lt[(5, 5, 5)] == 0
    assert lt.as_dict() == {(0, 0, 0): 3, (1, 0, 0): 1}


def test_trajectory_validation():
    with pytest.raises(ValueError):
        Trajectory(np.array([[1, 0, 0]]))
    with pytest.raises(ValueError):
        Trajectory(np.array([[0, 0, 0], [1, 1, 0]]))
    t = Trajectory(np.zeros((2, 3), dtype=int))
    with pytest.raises(ValueError):
        t.sites[0, 0] = 5
