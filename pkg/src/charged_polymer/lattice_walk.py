"""Lazy nearest-neighbour walk on Z^d (d >= 3) and its lattice constants.

Each step picks one of the ``2d`` unit moves or the zero move, all with
probability ``1/(2d+1)``. Move codes: ``2k`` is ``-e_k``, ``2k+1`` is
``+e_k`` and ``2d`` is the hold.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.special import ive

from ._rng import check_seed, chunk_sizes, derive_rng, parallel_map
from .errors import NonConvergenceError

__all__ = [
    "WalkConfig",
    "Trajectory",
    "LocalTimeField",
    "LatticeConstants",
    "ReturnEstimate",
    "check_dimension",
    "step_table",
    "simulate_walk",
    "simulate_moves",
    "moves_to_coordinates",
    "moves_to_keys",
    "truncation_allowance",
    "local_times",
    "green_constants",
    "first_return_times",
    "return_probability_mc",
]


def check_dimension(d) -> int:
    d = int(d)
    if d < 3:
        raise ValueError(f"dimension must be d >= 3 (transient walk), got d={d}")
    return d


def step_table(d: int) -> np.ndarray:
    """``(2d+1, d)`` displacement for each move code."""
    table = np.zeros((2 * d + 1, d), dtype=np.int64)
    for k in range(d):
        table[2 * k, k] = -1
        table[2 * k + 1, k] = 1
    return table


@dataclass(frozen=True)
class WalkConfig:
    d: int
    n: int
    seed: int

    def __post_init__(self):
        check_dimension(self.d)
        if int(self.n) < 1:
            raise ValueError(f"step count n must be >= 1, got {self.n}")
        check_seed(self.seed)


@dataclass(frozen=True)
class Trajectory:
    """Sites ``S(0), ..., S(n-1)`` as an ``(n, d)`` integer array, ``S(0) = 0``."""

    sites: np.ndarray

    def __post_init__(self):
        sites = np.asarray(self.sites, dtype=np.int64)
        if sites.ndim != 2 or sites.shape[0] < 1:
            raise ValueError("trajectory must be a nonempty (n, d) array")
        if np.any(sites[0] != 0):
            raise ValueError("trajectory must start at the origin")
        steps = np.abs(np.diff(sites, axis=0)).sum(axis=1)
        if np.any(steps > 1):
            raise ValueError("trajectory contains a step that is not a lazy nearest-neighbour move")
        sites.setflags(write=False)
        object.__setattr__(self, "sites", sites)

    @property
    def n(self) -> int:
        return self.sites.shape[0]

    @property
    def d(self) -> int:
        return self.sites.shape[1]

    def __len__(self) -> int:
        return self.n


@dataclass(frozen=True)
class LocalTimeField:
    """Sparse occupation counts of a trajectory.

    ``sites[j]`` was visited ``counts[j]`` times; ``index[k]`` is the row of
    ``sites`` holding ``S(k)``. Rows are in lexicographic site order.
    """

    sites: np.ndarray
    counts: np.ndarray
    index: np.ndarray = field(repr=False)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __len__(self) -> int:
        return len(self.counts)

    def __getitem__(self, site) -> int:
        return self.as_dict().get(tuple(int(c) for c in site), 0)

    def as_dict(self) -> dict[tuple[int, ...], int]:
        return {tuple(int(c) for c in s): int(l) for s, l in zip(self.sites, self.counts)}


@dataclass(frozen=True)
class LatticeConstants:
    d: int
    green_at_origin: float
    c_d: float
    return_probability: float
    chi_d: float
    tol: float
    error_estimate: float
    method: str

    def as_dict(self) -> dict:
        return {
            "d": self.d,
            "G": self.green_at_origin,
            "c_d": self.c_d,
            "return_probability": self.return_probability,
            "chi_d": self.chi_d,
            "tol": self.tol,
            "error_estimate": self.error_estimate,
            "method": self.method,
        }


@dataclass(frozen=True)
class ReturnEstimate:
    """Fraction of walks back at the origin within ``horizon`` steps.

    Truncation at a finite horizon can only miss returns, so the estimate is
    biased *below* the true return probability.
    """

    d: int
    estimate: float
    stderr: float
    samples: int
    horizon: int
    bias: str = "underestimates (returns after the horizon are not counted)"


def simulate_moves(d: int, steps: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """``(size, steps)`` array of uniform move codes in ``0..2d``."""
    return rng.integers(0, 2 * d + 1, size=(size, steps), dtype=np.uint8)


def moves_to_coordinates(moves: np.ndarray, d: int) -> np.ndarray:
    """Positions ``(size, steps+1, d)`` of walks started at the origin."""
    moves = np.atleast_2d(moves)
    size, steps = moves.shape
    out = np.zeros((size, steps + 1, d), dtype=np.int64)
    for k in range(d):
        inc = (moves == 2 * k + 1).astype(np.int32) - (moves == 2 * k).astype(np.int32)
        np.cumsum(inc, axis=1, out=out[:, 1:, k])
    return out


def moves_to_keys(moves: np.ndarray, d: int) -> np.ndarray:
    """Integer site labels ``(size, steps+1)``; equal labels in a row mean equal sites.

    Labels mix coordinates with a stride fitted to the realised range, so they
    stay within int64 for any horizon a single walk can reach.
    """
    moves = np.atleast_2d(moves)
    size, steps = moves.shape
    keys = np.zeros((size, steps + 1), dtype=np.int64)
    coord = np.zeros((size, steps + 1), dtype=np.int64)
    span = 1
    for k in range(d):
        inc = (moves == 2 * k + 1).astype(np.int32) - (moves == 2 * k).astype(np.int32)
        np.cumsum(inc, axis=1, out=coord[:, 1:])
        lo = int(coord.min()) if coord.size else 0
        width = (int(coord.max()) - lo + 1) if coord.size else 1
        if span * width >= 2**62:
            raise OverflowError("site labels do not fit in 64 bits; shorten the walk")
        keys *= width
        keys += coord - lo
        span *= width
    # origin-relative labels: the origin is always 0 and differences are preserved
    keys -= keys[:, :1]
    return keys


def simulate_walk(cfg: WalkConfig) -> Trajectory:
    rng = derive_rng(cfg.seed)
    moves = simulate_moves(cfg.d, cfg.n - 1, 1, rng)
    return Trajectory(moves_to_coordinates(moves, cfg.d)[0])


def local_times(traj: Trajectory) -> LocalTimeField:
    sites, index, counts = np.unique(traj.sites, axis=0, return_inverse=True, return_counts=True)
    return LocalTimeField(sites=sites, counts=counts.astype(np.int64), index=index.reshape(-1))


# --------------------------------------------------------------------------
# Green function at the origin
# --------------------------------------------------------------------------

def _bessel_asymptotic_coefficients(terms: int) -> np.ndarray:
    # sqrt(2 pi t) e^{-t} I_0(t) ~ sum_k a_k t^{-k}
    k = np.arange(terms)
    return np.array([math.factorial(2 * j) ** 2 / (math.factorial(j) ** 3 * 32.0**j) for j in k])


def _bessel_tail(d: int, T: float, terms: int = 10) -> float:
    a = _bessel_asymptotic_coefficients(terms)
    b = np.array([1.0])
    for _ in range(d):
        b = np.convolve(b, a)[:terms]
    k = np.arange(terms)
    p = d / 2 + k - 1
    return float((2 * np.pi) ** (-d / 2) * np.sum(b * T ** (-p) / p))


def _bessel_integral(d: int, nodes: int, top: int = 12) -> float:
    """int_0^inf (e^{-t} I_0(t))^d dt on doubling panels up to 2^top plus an asymptotic tail."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    edges = np.concatenate([[0.0], 2.0 ** np.arange(0, top + 1)])
    a, b = edges[:-1, None], edges[1:, None]
    t = (b - a) / 2 * x + (a + b) / 2
    wt = (b - a) / 2 * w
    body = float(np.sum(wt * ive(0, t) ** d))
    return body + _bessel_tail(d, float(edges[-1]))


def _torus_nodes(levels: int, nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes on [0, pi] with panels halving toward 0."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    edges = np.concatenate([[0.0], np.pi * 2.0 ** -np.arange(levels, -1, -1.0)])
    a, b = edges[:-1, None], edges[1:, None]
    return ((b - a) / 2 * x + (a + b) / 2).ravel(), ((b - a) / 2 * w).ravel()


def _torus_integral(d: int, levels: int, nodes: int) -> float:
    """pi^{-d} int_{[0,pi]^d} 1 / sum_i (1 - cos k_i) dk by graded product quadrature."""
    k, w = _torus_nodes(levels, nodes)
    c = 2.0 * np.sin(k / 2) ** 2  # 1 - cos k without cancellation
    tail = min(d, 3)
    block_c = sum(np.expand_dims(c, [a for a in range(tail) if a != i]) for i in range(tail))
    block_w = np.ones([1] * tail)
    for i in range(tail):
        block_w = block_w * np.expand_dims(w, [a for a in range(tail) if a != i])
    total = 0.0
    lead = d - tail
    if lead == 0:
        total = float(np.sum(block_w / block_c))
    else:
        for idx in np.ndindex(*([len(k)] * lead)):
            shift = c[list(idx)].sum()
            total += float(np.prod(w[list(idx)])) * float(np.sum(block_w / (block_c + shift)))
    return total / np.pi**d


def _constants_from_green(d, G, tol, err, method) -> LatticeConstants:
    c_d = G - 1.0
    r = 1.0 - 1.0 / (c_d + 1.0)
    return LatticeConstants(
        d=d, green_at_origin=G, c_d=c_d, return_probability=r, chi_d=-math.log(r),
        tol=tol, error_estimate=err, method=method,
    )


def green_constants(d: int, tol: float = 1e-10, method: str = "bessel") -> LatticeConstants:
    """Green function of the lazy walk at the origin and the derived constants.

    ``G = (2 pi)^{-d} int 1/(1 - phi(k)) dk`` with
    ``phi(k) = (1 + 2 sum_i cos k_i)/(2d+1)``. Since
    ``1 - phi = 2/(2d+1) * sum_i (1 - cos k_i)``, ``G = (2d+1)/2 * W_d``.

    Parameters
    ----------
    d : int
        Dimension, at least 3.
    tol : float
        Absolute tolerance on ``G``, judged by the change between two
        successive refinement levels.
    method : {"bessel", "torus"}
        ``"bessel"`` factorises the torus integral through
        ``1/a = int_0^inf e^{-ta} dt`` into
        ``W_d = int_0^inf (e^{-t} I_0(t))^d dt``; fast at any ``d``.
        ``"torus"`` integrates the singular integrand directly on
        ``[0, pi]^d`` with panels graded toward ``k = 0``; independent of
        the first route but only practical for ``d <= 4``.

    Raises
    ------
    NonConvergenceError
        When refinement stops short of ``tol``; carries the best estimate.
    """
    d = check_dimension(d)
    if not tol > 0:
        raise ValueError("tol must be positive")
    scale = (2 * d + 1) / 2.0
    if method == "bessel":
        nodes = 8
        prev = scale * _bessel_integral(d, nodes)
        while nodes < 512:
            nodes *= 2
            cur = scale * _bessel_integral(d, nodes)
            err = abs(cur - prev)
            if err <= tol:
                return _constants_from_green(d, cur, tol, err, method)
            prev = cur
        raise NonConvergenceError(
            f"Green integral did not reach tol={tol:g} (last change {err:.3g})",
            best=_constants_from_green(d, cur, tol, err, method), error=err,
        )
    if method == "torus":
        nodes = 6
        levels = 6
        prev = scale * _torus_integral(d, levels, nodes)
        err = math.inf
        budget = 2e8
        while True:
            levels += 2
            if (nodes * (levels + 1)) ** d > budget:
                break
            cur = scale * _torus_integral(d, levels, nodes)
            err = abs(cur - prev)
            if err <= tol:
                # the level change misses the per-panel rule error; check more nodes too
                finer = scale * _torus_integral(d, levels, nodes + 2)
                err = max(err, abs(finer - cur))
                if err <= tol:
                    return _constants_from_green(d, finer, tol, err, method)
                nodes += 2
                cur = finer
            prev = cur
        raise NonConvergenceError(
            f"torus quadrature did not reach tol={tol:g} (last change {err:.3g})",
            best=_constants_from_green(d, prev, tol, err, method), error=err,
        )
    raise ValueError(f"unknown method {method!r}; expected 'bessel' or 'torus'")


# --------------------------------------------------------------------------
# Monte Carlo first returns
# --------------------------------------------------------------------------

@numba.njit(nogil=True, cache=True)
def _advance(pos, l1, ret, active, moves, t0, d, horizon):
    hold = 2 * d
    steps = moves.shape[1]
    for j in range(active.shape[0]):
        i = active[j]
        for b in range(steps):
            t = t0 + b + 1
            mv = moves[j, b]
            if mv != hold:
                ax = mv >> 1
                old = pos[i, ax]
                new = old + 1 if mv & 1 else old - 1
                pos[i, ax] = new
                l1[i] += abs(new) - abs(old)
            if l1[i] == 0:
                ret[i] = t
                break
            if l1[i] > horizon - t:
                ret[i] = -1  # cannot come back in the remaining time
                break


def _first_returns_chunk(args):
    d, horizon, size, seed, task, block = args
    rng = derive_rng(seed, task)
    pos = np.zeros((size, d), dtype=np.int64)
    l1 = np.zeros(size, dtype=np.int64)
    ret = np.zeros(size, dtype=np.int64)
    active = np.arange(size)
    t = 0
    while t < horizon and active.size:
        b = min(block, horizon - t)
        moves = rng.integers(0, 2 * d + 1, size=(active.size, b), dtype=np.uint8)
        _advance(pos, l1, ret, active, moves, t, d, horizon)
        active = active[ret[active] == 0]
        t += b
    ret[ret < 0] = 0
    return ret


def first_return_times(d: int, horizon: int, samples: int, seed: int,
                       workers: int = 1, chunk: int = 1 << 16) -> np.ndarray:
    """First return time to the origin of ``samples`` walks, 0 when none by ``horizon``."""
    d = check_dimension(d)
    if int(samples) < 1:
        raise ValueError("samples must be >= 1")
    if int(horizon) < 1:
        raise ValueError("horizon must be >= 1")
    seed = check_seed(seed)
    tasks = [(d, int(horizon), size, seed, i, 256) for i, size in enumerate(chunk_sizes(int(samples), chunk))]
    return np.concatenate(parallel_map(_first_returns_chunk, tasks, workers))


def truncation_allowance(d: int, horizon: int) -> float:
    """Expected number of visits to the origin after ``horizon``, from the local limit.

    ``P_0(S(t) = 0) ~ (4 pi t / (2d+1))^{-d/2}``; summing over ``t > horizon``
    bounds the probability that the first return happens after the horizon,
    which is the bias of a truncated return frequency.
    """
    d = check_dimension(d)
    k = d / 2
    return (4 * math.pi / (2 * d + 1)) ** (-k) * float(horizon) ** (1 - k) / (k - 1)


def return_probability_mc(d: int, horizon: int, samples: int, seed: int,
                          workers: int = 1) -> ReturnEstimate:
    times = first_return_times(d, horizon, samples, seed, workers=workers)
    p = float(np.mean(times > 0))
    se = math.sqrt(p * (1 - p) / len(times))
    return ReturnEstimate(d=d, estimate=p, stderr=se, samples=len(times), horizon=int(horizon))
