"""Charged-polymer observables on a walk path.

For a path ``S`` and charges ``eta``:

* local charge ``q(z) = sum_{k: S(k)=z} eta(k)``,
* ``H_n = sum_z [q(z)^2 - sum_{k: S(k)=z} eta(k)^2]`` (pairs ``i != j`` on a site),
* ``X_n = sum_z [q(z)^2 - l(z)]`` and ``Y_n = sum_k (1 - eta(k)^2)``,

so that ``H_n = X_n + Y_n`` site by site.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._rng import derive_rng
from .charge_models import ChargeDistribution
from .lattice_walk import LocalTimeField, Trajectory, local_times

__all__ = [
    "PolymerSample",
    "EnergyBreakdown",
    "LevelSets",
    "SiteGroups",
    "build_sample",
    "energy",
    "energy_literal",
    "resampled_field",
    "resampled_energy",
    "zeta_sample",
    "level_sets",
    "group_sites",
]


@dataclass(frozen=True)
class PolymerSample:
    trajectory: Trajectory
    charges: np.ndarray
    local_times: LocalTimeField = field(repr=False)
    local_charges: np.ndarray = field(repr=False)

    @classmethod
    def from_arrays(cls, trajectory: Trajectory, charges) -> "PolymerSample":
        charges = np.asarray(charges)
        if charges.shape != (trajectory.n,):
            raise ValueError(f"expected {trajectory.n} charges, got shape {charges.shape}")
        lt = local_times(trajectory)
        q = np.zeros(len(lt), dtype=charges.dtype)
        # unbuffered add keeps path order and exact integer sums
        np.add.at(q, lt.index, charges)
        return cls(trajectory, charges, lt, q)

    @property
    def n(self) -> int:
        return self.trajectory.n


@dataclass(frozen=True)
class EnergyBreakdown:
    H: float
    X_check: float
    Y: float
    sites: np.ndarray = field(repr=False)
    H_site: np.ndarray = field(repr=False)
    X_site: np.ndarray = field(repr=False)

    def as_dict(self) -> dict:
        return {"H": _scalar(self.H), "X_check": _scalar(self.X_check), "Y": _scalar(self.Y)}


def _scalar(v):
    return int(v) if isinstance(v, (np.integer, int)) else float(v)


def build_sample(traj: Trajectory, dist: ChargeDistribution, seed: int) -> PolymerSample:
    rng = derive_rng(seed)
    return PolymerSample.from_arrays(traj, dist.sample(rng, traj.n))


def energy(sample: PolymerSample) -> EnergyBreakdown:
    """Grouped evaluation of ``H_n``, ``X_n``, ``Y_n`` in ``O(n log n)``."""
    eta = sample.charges
    lt = sample.local_times
    sq = np.zeros(len(lt), dtype=eta.dtype)
    np.add.at(sq, lt.index, eta * eta)
    q2 = sample.local_charges * sample.local_charges
    h_site = q2 - sq
    x_site = q2 - lt.counts.astype(eta.dtype)
    y = (1 - eta * eta).sum()
    return EnergyBreakdown(H=h_site.sum(), X_check=x_site.sum(), Y=y,
                           sites=lt.sites, H_site=h_site, X_site=x_site)


def energy_literal(sample: PolymerSample):
    """``sum_{i != j} eta(i) eta(j) 1{S(i) = S(j)}`` by the full ``n x n`` double sum."""
    idx = sample.local_times.index
    eta = sample.charges
    same = idx[:, None] == idx[None, :]
    np.fill_diagonal(same, False)
    return (eta[:, None] * eta[None, :] * same).sum()


def resampled_field(lt: LocalTimeField, dist: ChargeDistribution, seed: int, size: int | None = None):
    """Independent site sums ``q(z) = sum_{i <= l(z)} eta_z(i)`` for a frozen walk.

    Returns an array aligned with ``lt.sites``, with a leading axis of
    length ``size`` when given.
    """
    rng = derive_rng(seed)
    reps = 1 if size is None else int(size)
    draws = dist.sample(rng, (reps, lt.total))
    starts = np.concatenate([[0], np.cumsum(lt.counts)[:-1]])
    q = np.add.reduceat(draws, starts, axis=1)
    return q[0] if size is None else q


def resampled_energy(lt: LocalTimeField, dist: ChargeDistribution, seed: int, size: int | None = None):
    """``X_n = sum_z [q(z)^2 - l(z)]`` from :func:`resampled_field`."""
    q = resampled_field(lt, dist, seed, size)
    return (q * q).sum(axis=-1) - lt.total


def zeta_sample(dist: ChargeDistribution, n: int, seed: int, size: int | None = None):
    """``zeta(n) = (n^{-1/2} sum_{i <= n} eta(i))^2``."""
    if int(n) < 1:
        raise ValueError("n must be >= 1")
    rng = derive_rng(seed)
    reps = 1 if size is None else int(size)
    s = dist.sample(rng, (reps, int(n))).sum(axis=1)
    z = s * s / n
    return float(z[0]) if size is None else z


@dataclass(frozen=True)
class LevelSets:
    """Sites sorted by local time.

    ``core`` holds sites with ``sqrt(xi)/A < l(z) < A sqrt(xi)`` (strict).
    ``levels[j]`` holds sites with ``b[j] <= l(z) < b[j+1]`` where
    ``b[j] = 2^(i0 + j) / A`` runs from ``b_{i0} <= 1 < b_{i0+1}`` up to
    ``b_{N+1}``, ``b_N <= sqrt(xi)/A < b_{N+1}``.
    """

    A: float
    xi: float
    core_sites: np.ndarray
    core_counts: np.ndarray
    i0: int
    N: int
    boundaries: np.ndarray
    levels: list = field(repr=False)

    @property
    def level_counts(self) -> list[int]:
        return [len(s) for s in self.levels]


def _floor_log2(x: float) -> int:
    """Largest integer ``k`` with ``2^k <= x`` (``x > 0``), exact at powers of two."""
    m, e = math.frexp(x)  # x = m 2^e, 0.5 <= m < 1
    return e - 1


def level_sets(lt: LocalTimeField, A: float, xi: float) -> LevelSets:
    A, xi = float(A), float(xi)
    if not A > 1:
        raise ValueError("A must exceed 1")
    if not xi > 0:
        raise ValueError("xi must be positive")
    root = math.sqrt(xi)
    l = lt.counts
    core = (l > root / A) & (l < A * root)
    # b_i = 2^i / A; b_{i0} <= 1 < b_{i0+1}  <=>  2^{i0} <= A
    i0 = _floor_log2(A)
    # b_N <= sqrt(xi)/A  <=>  2^N <= sqrt(xi)
    N = _floor_log2(root)
    if N >= i0:
        b = np.ldexp(1.0, np.arange(i0, N + 2)) / A
    else:
        b = np.empty(0)
    levels = [lt.sites[(l >= b[j]) & (l < b[j + 1])] for j in range(len(b) - 1)]
    return LevelSets(A=A, xi=xi, core_sites=lt.sites[core], core_counts=l[core],
                     i0=i0, N=N, boundaries=b, levels=levels)


# --------------------------------------------------------------------------
# Batched grouping for Monte Carlo
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SiteGroups:
    """Per-row grouping of site labels.

    Positions are reordered so that visits to one site are contiguous;
    because charges are i.i.d. they may be drawn directly in this order.
    Group ``g`` spans ``starts[g] : starts[g] + counts[g]`` of the flattened
    ``(rows, n)`` layout and belongs to row ``row[g]``.
    """

    rows: int
    n: int
    starts: np.ndarray
    counts: np.ndarray
    row: np.ndarray
    row_starts: np.ndarray
    group_of_position: np.ndarray
    origin_group: np.ndarray

    def local_charges(self, charges: np.ndarray) -> np.ndarray:
        return np.add.reduceat(charges.reshape(-1), self.starts)

    def per_row(self, group_values: np.ndarray) -> np.ndarray:
        return np.add.reduceat(group_values, self.row_starts)

    def x_check(self, charges: np.ndarray) -> np.ndarray:
        """``X_n`` for each row given charges in grouped order."""
        q = self.local_charges(charges)
        return self.per_row(q * q) - self.n

    def set_mass(self, charges: np.ndarray, group_mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Charge and occupation summed over groups flagged in ``group_mask``, per row."""
        q = self.local_charges(charges)
        return self.per_row(np.where(group_mask, q, 0)), self.per_row(np.where(group_mask, self.counts, 0))

    def most_visited(self) -> np.ndarray:
        """Index of the most visited group in each row (lowest label on ties)."""
        peak = np.maximum.reduceat(self.counts, self.row_starts)
        hits = np.flatnonzero(self.counts == peak[self.row])
        _, first = np.unique(self.row[hits], return_index=True)
        return hits[first]


def group_sites(keys: np.ndarray) -> SiteGroups:
    keys = np.atleast_2d(keys)
    rows, n = keys.shape
    sk = np.sort(keys, axis=1)
    new = np.ones((rows, n), dtype=bool)
    new[:, 1:] = sk[:, 1:] != sk[:, :-1]
    flat_new = new.reshape(-1)
    starts = np.flatnonzero(flat_new)
    counts = np.diff(np.append(starts, rows * n))
    row = starts // n
    row_starts = np.searchsorted(row, np.arange(rows))
    gop = np.cumsum(flat_new) - 1
    origin_pos = np.flatnonzero((sk == 0).reshape(-1) & flat_new)
    return SiteGroups(rows=rows, n=n, starts=starts, counts=counts, row=row, row_starts=row_starts,
                      group_of_position=gop, origin_group=gop[origin_pos])
