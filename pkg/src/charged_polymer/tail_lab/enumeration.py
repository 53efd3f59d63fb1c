"""Exact enumeration oracles with rational arithmetic."""
from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np

from ..charge_models import ChargeDistribution, Rademacher
from ..errors import InstanceTooLarge
from ..lattice_walk import check_dimension, moves_to_keys
from ..polymer_energy import group_sites
from .estimators import TailEstimate

__all__ = [
    "exact_x_law",
    "exact_tail",
    "LATTICE_LAWS",
    "MonotonicityReport",
    "check_monotonicity",
]

DEFAULT_MAX_TERMS = 10**8


def _walk_partitions(d: int, n: int) -> Counter:
    """Multiset of visit counts (sorted descending) for every lazy path of ``n`` sites.

    Paths are enumerated as base-``(2d+1)`` counters over the ``n-1`` moves.
    """
    base = 2 * d + 1
    total = base ** (n - 1)
    out: Counter = Counter()
    block = 1 << 18
    for lo in range(0, total, block):
        codes = np.arange(lo, min(total, lo + block), dtype=np.int64)
        digits = (codes[:, None] // base ** np.arange(n - 1, dtype=np.int64)) % base
        keys = moves_to_keys(digits.astype(np.uint8), d) if n > 1 else np.zeros((len(codes), 1), np.int64)
        g = group_sites(keys)
        rank = np.arange(len(g.counts)) - g.row_starts[g.row]
        sig = np.zeros((len(codes), n), dtype=np.int64)
        sig[g.row, rank] = g.counts
        sig = -np.sort(-sig, axis=1)
        uniq, mult = np.unique(sig, axis=0, return_counts=True)
        for row, m in zip(uniq, mult):
            out[tuple(int(v) for v in row if v)] += int(m)
    return out


@lru_cache(maxsize=None)
def _charge_counts(partition: tuple[int, ...]) -> Counter:
    """Counts of ``sum_parts (sum of +-1 over the part)^2 - n`` over all ``2^n`` sign vectors."""
    n = sum(partition)
    signs = 1 - 2 * ((np.arange(2**n)[:, None] >> np.arange(n)) & 1)
    bounds = np.cumsum((0,) + partition)
    x = sum(signs[:, a:b].sum(axis=1) ** 2 for a, b in zip(bounds[:-1], bounds[1:])) - n
    return Counter(int(v) for v in x)


@lru_cache(maxsize=None)
def _x_law_cached(d: int, n: int) -> tuple[tuple[int, Fraction], ...]:
    parts = _walk_partitions(d, n)
    denom = (2 * d + 1) ** (n - 1) * 2**n
    law: dict[int, int] = {}
    for part, mult in parts.items():
        for v, c in _charge_counts(part).items():
            law[v] = law.get(v, 0) + mult * c
    return tuple(sorted((v, Fraction(c, denom)) for v, c in law.items()))


def exact_x_law(d: int, n: int, max_terms: int = DEFAULT_MAX_TERMS) -> dict[int, Fraction]:
    """Exact law of ``X_n`` under +-1 charges, as ``{value: probability}``."""
    d = check_dimension(d)
    if n < 1:
        raise ValueError("n must be >= 1")
    terms = (2 * d + 1) ** (n - 1) * 2**n
    if terms > max_terms:
        raise InstanceTooLarge(f"{terms} walk x charge configurations exceed the budget of {max_terms}")
    return dict(_x_law_cached(d, n))


def exact_tail(d: int, n: int, xi: float, dist: ChargeDistribution | None = None,
               max_terms: int = DEFAULT_MAX_TERMS) -> TailEstimate:
    """``P(X_n >= xi)`` summed over every walk path and sign vector."""
    if dist is not None and not isinstance(dist, Rademacher):
        raise ValueError("exact enumeration is only available for +-1 charges")
    law = exact_x_law(d, n, max_terms)
    p = sum((q for v, q in law.items() if v >= xi), Fraction(0))
    return TailEstimate.exact(p, d=d, n=n, xi=xi, dist="rademacher",
                              samples=(2 * d + 1) ** (n - 1) * 2**n)


# --------------------------------------------------------------------------
# Monotonicity of P(sum_j (sum_{i <= n_j} eta_j(i))^2 > xi) in each n_j
# --------------------------------------------------------------------------

LATTICE_LAWS: dict[str, dict[int, Fraction]] = {
    # symmetric and unimodal on {-1, 0, 1}
    "three_point": {-1: Fraction(1, 3), 0: Fraction(1, 3), 1: Fraction(1, 3)},
    "lazy": {-1: Fraction(1, 4), 0: Fraction(1, 2), 1: Fraction(1, 4)},
    # symmetric but not unimodal: parity of the sum flips with each charge
    "rademacher": {-1: Fraction(1, 2), 1: Fraction(1, 2)},
}


def _convolve(a: dict, b: dict) -> dict:
    out: dict = {}
    for x, p in a.items():
        for y, q in b.items():
            out[x + y] = out.get(x + y, 0) + p * q
    return out


@lru_cache(maxsize=None)
def _square_sum_law(law_name: str, k: int) -> tuple:
    law = LATTICE_LAWS[law_name]
    dist = {0: Fraction(1)}
    for _ in range(k):
        dist = _convolve(dist, law)
    sq: dict = {}
    for s, p in dist.items():
        sq[s * s] = sq.get(s * s, 0) + p
    return tuple(sorted(sq.items()))


@lru_cache(maxsize=None)
def _tuple_law(law_name: str, counts: tuple[int, ...]) -> tuple:
    dist = {0: Fraction(1)}
    for k in counts:
        dist = _convolve(dist, dict(_square_sum_law(law_name, k)))
    return tuple(sorted(dist.items()))


def _tail_above(law_name: str, counts: tuple[int, ...], xi) -> Fraction:
    return sum((p for v, p in _tuple_law(law_name, counts) if v > xi), Fraction(0))


@dataclass(frozen=True)
class MonotonicityReport:
    law: str
    step: int
    xi_grid: tuple
    comparisons: int
    violations: list = field(repr=False)
    rows: list = field(repr=False)

    @property
    def passed(self) -> bool:
        return not self.violations


def check_monotonicity(max_n: int = 4, sites: int = 3, xi_grid=None, law: str = "rademacher",
                       step: int = 1) -> MonotonicityReport:
    """Compare ``P(sum_j S_j^2 > xi)`` for every count tuple against each single-coordinate increase.

    ``S_j`` sums ``n_j`` i.i.d. charges drawn from ``LATTICE_LAWS[law]``;
    tuples range over ``{0..max_n}^s`` for ``s = 1..sites`` and each
    coordinate is raised by ``step`` while staying within ``max_n``.
    Probabilities are exact rationals.
    """
    if law not in LATTICE_LAWS:
        raise ValueError(f"unknown law {law!r}; choose from {sorted(LATTICE_LAWS)}")
    if xi_grid is None:
        top = sites * max_n**2
        xi_grid = tuple(np.linspace(0.5, top - 0.5, 20).tolist())
    xi_grid = tuple(xi_grid)
    rows, violations = [], []
    comparisons = 0
    for s in range(1, sites + 1):
        for counts in itertools.product(range(max_n + 1), repeat=s):
            for j in range(s):
                if counts[j] + step > max_n:
                    continue
                bigger = counts[:j] + (counts[j] + step,) + counts[j + 1:]
                for xi in xi_grid:
                    lo = _tail_above(law, counts, xi)
                    hi = _tail_above(law, bigger, xi)
                    comparisons += 1
                    row = {"counts": counts, "raised": j, "xi": xi, "p": lo, "p_raised": hi, "ok": lo <= hi}
                    rows.append(row)
                    if lo > hi:
                        violations.append(row)
    return MonotonicityReport(law=law, step=step, xi_grid=xi_grid, comparisons=comparisons,
                              violations=violations, rows=rows)
