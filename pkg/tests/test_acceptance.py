"""The ten acceptance criteria at their stated tolerances.

Run ``pytest tests/test_acceptance.py -v``; the terminal summary prints one
PASS/FAIL line per criterion.
"""
import math
import time

import numpy as np
import pytest

from charged_polymer.charge_models import example_family, gaussian, rademacher
from charged_polymer.lattice_walk import (WalkConfig, green_constants, local_times, simulate_walk,
                                          truncation_allowance)
from charged_polymer.polymer_energy import build_sample, energy, energy_literal, resampled_field
from charged_polymer.rate_function import (LegendrePair, PileProblem, PinProblem, check_duality_identity,
                                           rate_constant, solve_pile, solve_pile_bruteforce, solve_pin,
                                           solve_pin_golden)
from charged_polymer.tail_lab import check_monotonicity, exact_tail, naive_tail, rate_curve, tilted_tail
from charged_polymer.tail_lab.bounds import (check_concentration, check_nagaev, check_return_tail,
                                             check_zeta_regimes, plus_shape)
from charged_polymer._rng import child_seed, derive_rng

from conftest import BIG_MC

DISTS = {"gaussian": gaussian(), "rademacher": rademacher(), "example_family": example_family()}


@pytest.mark.criterion(1)
def test_exact_decomposition(acceptance):
    t0 = time.perf_counter()
    worst = 0.0
    literal_checked = 0
    for k, (name, dist) in enumerate(DISTS.items()):
        for i in range(10_000):
            traj = simulate_walk(WalkConfig(3, 500, child_seed(1, k, i, 0)))
            sample = build_sample(traj, dist, child_seed(1, k, i, 1))
            e = energy(sample)
            scale = float(np.sum(np.abs(sample.local_charges)) ** 2) + 1.0
            if name == "rademacher":
                assert e.H == e.X_check + e.Y
            else:
                worst = max(worst, abs(e.H - (e.X_check + e.Y)) / scale)
        # literal double sum on a subset of shorter chains
        for i in range(200):
            traj = simulate_walk(WalkConfig(3, 200, child_seed(2, k, i, 0)))
            sample = build_sample(traj, dist, child_seed(2, k, i, 1))
            lit, grouped = energy_literal(sample), energy(sample).H
            if name == "rademacher":
                assert lit == grouped
            else:
                scale = float(np.sum(np.abs(sample.charges)) ** 2)
                worst = max(worst, abs(lit - grouped) / scale)
            literal_checked += 1
    elapsed = time.perf_counter() - t0
    acceptance["detail"] = f"worst relative gap {worst:.2e}, {literal_checked} literal sums, {elapsed:.0f}s"
    assert worst <= 1e-12
    assert elapsed < 60


@pytest.mark.criterion(2)
def test_gaussian_closed_form(acceptance):
    worst = 0.0
    for d in (3, 4, 5):
        c = green_constants(d)
        for sigma in (0.5, 1.0, 2.0):
            got = rate_constant(gaussian(sigma), d, constants=c)
            worst = max(worst, abs(got - math.sqrt(2 * c.chi_d / sigma)))
    acceptance["detail"] = f"max |error| {worst:.2e}"
    assert worst <= 1e-6


@pytest.mark.criterion(3)
def test_duality_identity(acceptance):
    g = check_duality_identity(LegendrePair.from_distribution(gaussian()), np.linspace(0.1, 5, 200))
    r = check_duality_identity(LegendrePair.from_distribution(rademacher()), np.linspace(0.05, 0.95, 200))
    e = check_duality_identity(LegendrePair.from_distribution(example_family()), np.linspace(0.1, 3, 40))
    acceptance["detail"] = f"gaussian {g:.1e}, rademacher {r:.1e}, example family {e:.1e}"
    assert g <= 1e-6 and r <= 1e-6
    assert e <= 1e-4


@pytest.mark.criterion(4)
def test_variational_identities(acceptance):
    rng = derive_rng(4)
    pin_worst = 0.0
    for _ in range(20):
        choice = rng.integers(3)
        dist = (gaussian(float(rng.uniform(0.5, 2))), rademacher(), example_family())[choice]
        pair = LegendrePair.from_distribution(dist)
        prob = PinProblem(alpha=float(rng.uniform(0.1, 3)), beta=float(rng.uniform(0.2, 5)), pair=pair)
        a, b = solve_pin(prob).value, solve_pin_golden(prob).value
        pin_worst = max(pin_worst, abs(a - b) / abs(b))
    pile_worst = 0.0
    pairs = [LegendrePair.from_distribution(gaussian()), LegendrePair.from_distribution(example_family())]
    for _ in range(10):
        m = int(rng.integers(1, 5))
        prob = PileProblem(weights=tuple(rng.uniform(0.5, 4, m)), target=float(rng.uniform(0.2, 3)))
        pair = pairs[int(rng.integers(2))]
        pile_worst = max(pile_worst, abs(solve_pile(prob, pair).value - solve_pile_bruteforce(prob, pair).value))
    acceptance["detail"] = f"pin max rel gap {pin_worst:.1e}, pile max gap {pile_worst:.1e}"
    assert pin_worst <= 1e-6
    assert pile_worst <= 1e-3


@pytest.mark.criterion(5)
def test_lattice_constants(acceptance, big_return_times):
    c = green_constants(3)
    coarse = green_constants(3, tol=1e-7)
    torus = green_constants(3, tol=1e-6, method="torus")
    stable = abs(c.chi_d - coarse.chi_d)
    cross = abs(c.chi_d - torus.chi_d)
    times, elapsed = big_return_times
    p = float(np.mean(times > 0))
    se = math.sqrt(p * (1 - p) / len(times))
    allowance = truncation_allowance(3, BIG_MC["horizon"])
    gap = c.return_probability - p
    acceptance["detail"] = (f"chi_3 refinement gap {stable:.1e} (estimate {c.error_estimate:.1e}), torus gap {cross:.1e}; MC {p:.5f} vs "
                            f"{c.return_probability:.5f} (gap {gap:.4f}, 3se {3 * se:.4f}, "
                            f"truncation {allowance:.4f}), MC {elapsed:.0f}s")
    assert stable <= 1e-6 and c.error_estimate <= 1e-6
    assert cross <= 1e-6
    assert -3 * se <= gap <= 3 * se + allowance


@pytest.mark.criterion(6)
def test_oracle_equivalence(acceptance):
    t0 = time.perf_counter()
    worst, min_ess = 0.0, math.inf
    for n in (2, 4, 6):
        for xi in (2, 4, 6):
            ex = exact_tail(3, n, xi).probability
            nv = naive_tail(3, n, xi, samples=10**6, seed=child_seed(6, n, xi, 0))
            tt = tilted_tail(3, n, xi, samples=10**6, seed=child_seed(6, n, xi, 1))
            for est in (nv, tt):
                gap = abs(est.probability - ex)
                assert gap <= 3 * est.stderr, (n, xi, est.method, est.probability, ex)
                if est.stderr > 0:
                    worst = max(worst, gap / est.stderr)
            min_ess = min(min_ess, tt.ess)
    elapsed = time.perf_counter() - t0
    acceptance["detail"] = f"worst gap {worst:.2f} SE, min tilted ESS {min_ess:.0f}, {elapsed:.0f}s"
    assert min_ess >= 100


@pytest.mark.criterion(7)
@pytest.mark.xfail(strict=True, reason="+-1 charges break monotonicity at unit steps through parity, "
                                       "e.g. P(eta^2 > 1/2) = 1 but P((eta_1 + eta_2)^2 > 1/2) = 1/2")
def test_monotonicity(acceptance):
    t0 = time.perf_counter()
    rep = check_monotonicity(max_n=4, sites=3, law="rademacher")
    elapsed = time.perf_counter() - t0
    acceptance["detail"] = (f"{len(rep.violations)} violations in {rep.comparisons} comparisons for "
                            f"+-1 charges, {elapsed:.1f}s (see the decisions ledger)")
    assert elapsed < 120
    assert rep.passed


@pytest.mark.criterion(8)
def test_resampling_identity(acceptance):
    traj = simulate_walk(WalkConfig(3, 50, 8))
    lt = local_times(traj)
    _, label = np.unique(traj.sites, axis=0, return_inverse=True)
    onehot = np.zeros((50, label.max() + 1))
    onehot[np.arange(50), label.reshape(-1)] = 1.0
    worst = 0.0
    for k, dist in enumerate(DISTS.values()):
        # path-ordered: charges attached to monomers in walk order
        q_path = dist.sample(derive_rng(8, k, 0), (100_000, 50)) @ onehot
        x_path = (q_path**2).sum(axis=1) - 50
        x_res = (resampled_field(lt, dist, child_seed(8, k, 1), size=100_000) ** 2).sum(axis=1) - lt.total
        for p in (1, 2, 3, 4):
            a, b = x_path.astype(float) ** p, x_res.astype(float) ** p
            se = math.sqrt(a.var() / a.size + b.var() / b.size)
            z = abs(a.mean() - b.mean()) / se if se > 0 else 0.0
            worst = max(worst, z)
    acceptance["detail"] = f"largest moment gap {worst:.2f} sigma over 3 laws x 4 moments"
    assert worst <= 3


@pytest.mark.criterion(9)
def test_bound_shapes(acceptance, big_return_times):
    t0 = time.perf_counter()
    conc = check_concentration(3, plus_shape(3), 1000, np.arange(0, 30, 2), 40_000, 91)
    zetas = [check_zeta_regimes(gaussian(), 200, np.linspace(0, 20, 21), 200_000, 92),
             check_zeta_regimes(rademacher(), 20, np.linspace(0, 30, 31), 200_000, 93),
             check_zeta_regimes(example_family(), 10, np.linspace(0, 30, 31), 200_000, 94)]
    nag = check_nagaev(gaussian(), 1000, np.array([0, 50, 100, 150, 200, 250.0]), 20_000, 95)
    times, _ = big_return_times
    ret = check_return_tail(3, BIG_MC["samples"], BIG_MC["horizon"], BIG_MC["seed"], times=times)
    elapsed = time.perf_counter() - t0
    acceptance["detail"] = (f"kappa charge {conc.fitted['kappa_charge']:.3f}, return exponent "
                            f"{ret.fitted['exponent']:.3f}, C_Y {nag.fitted['C_Y']:.3f}, {elapsed:.0f}s")
    for rep in [conc, *zetas, nag, ret]:
        assert rep.passed, (rep.name, rep.checks, rep.fitted)
    assert zetas[1].checks["zero_beyond_support"]
    assert -0.65 <= ret.fitted["exponent"] <= -0.35
    assert elapsed < 1200


@pytest.mark.criterion(10)
def test_rate_curve_report(acceptance):
    rows = rate_curve(3, gaussian(), [100, 1000, 10_000], 1.0, samples=4000, seed=10)
    values = [r.normalized_log_tail for r in rows]
    acceptance["detail"] = ("report only: -log p/sqrt(xi) = " + ", ".join(f"{v:.3f}" for v in values)
                            + f"; predicted {rows[0].predicted:.4f}")
    assert all(math.isfinite(v) and v > 0 for v in values)
