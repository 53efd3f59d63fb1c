"""Monte Carlo estimators of ``P(X_n >= xi)``: plain indicator means and
importance sampling with an exponential tilt on one site's charges."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np
from scipy.special import logsumexp

from .._rng import check_seed, child_seed, chunk_sizes, derive_rng, parallel_map
from ..charge_models import ChargeDistribution, rademacher
from ..errors import WeightOverflow
from ..lattice_walk import check_dimension, moves_to_keys, simulate_moves
from ..polymer_energy import group_sites
from ..rate_function import LegendrePair, rate_constant

__all__ = [
    "TailEstimate",
    "TiltPlan",
    "naive_tail",
    "naive_tail_curve",
    "tilted_tail",
    "RateCurveRow",
    "rate_curve",
]

#: positions (rows x n) handled per chunk
CHUNK_POSITIONS = 1 << 21
#: log-weights above this are treated as a broken tilt
LOG_WEIGHT_LIMIT = 700.0

# child-stream indices under (seed, chunk)
_WALK, _CHARGE, _SIGN, _TILT, _BIAS = range(5)


@dataclass(frozen=True)
class TailEstimate:
    """An estimate of ``P(X_n >= xi)``.

    ``stderr`` is the Monte Carlo standard error of ``probability``;
    ``ess`` is ``(sum w)^2 / sum w^2`` and equals ``samples`` for
    unweighted estimators. ``exact_value`` holds the rational result of
    enumeration, as ``"p/q"``.
    """

    probability: float
    log_probability: float
    stderr: float
    method: str
    samples: int
    ess: float
    xi: float
    d: int
    n: int
    dist: str = ""
    theta: float | None = None
    exact_value: str | None = None

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0 + 1e-12 and self.method != "tilted":
            raise ValueError(f"probability {self.probability} outside [0, 1]")
        if self.ess > self.samples * (1 + 1e-9):
            raise ValueError("effective sample size exceeds the sample count")
        if self.method == "exact" and self.stderr != 0:
            raise ValueError("exact estimates carry no standard error")

    @classmethod
    def exact(cls, p: Fraction, *, d: int, n: int, xi: float, dist: str, samples: int) -> "TailEstimate":
        pf = float(p)
        return cls(probability=pf, log_probability=math.log(pf) if p > 0 else -math.inf,
                   stderr=0.0, method="exact", samples=samples, ess=float(samples),
                   xi=float(xi), d=d, n=n, dist=dist, exact_value=f"{p.numerator}/{p.denominator}")

    @property
    def relative_error(self) -> float:
        return self.stderr / self.probability if self.probability > 0 else math.inf

    def as_dict(self) -> dict:
        return asdict(self)

    def to_json(self, schema_version: int = 1) -> str:
        rec = {"schema_version": schema_version, "record": "tail_estimate", **self.as_dict()}
        return json.dumps(rec, sort_keys=True, allow_nan=True)


@dataclass(frozen=True)
class TiltPlan:
    """Importance-sampling configuration.

    Parameters
    ----------
    target : {"most_visited", "origin", "revisited"}
        Which sites' charges are tilted: the most visited site (ties go to
        the lowest label), the origin, or every site visited at least twice.
    theta : float, optional
        Fixed tilt. ``None`` uses ``I'(sqrt(xi / sum l^2))`` per walk, the
        sum running over the tilted sites' local times ``l``; for a single
        site this is ``I'(sqrt(xi) / l)``, which centres the local charge at
        ``sqrt(xi)``. It is clamped inside the domain of ``I'``.
    hold_steps, hold_prob : int, float
        During the first ``hold_steps`` moves a walk sitting at the origin
        holds with probability ``hold_prob`` instead of ``1/(2d+1)``.
    symmetric : bool
        Tilt each site by ``+theta`` or ``-theta`` with probability 1/2. The
        event is even in every local charge, so both signs are covered.
    """

    target: str = "revisited"
    theta: float | None = None
    hold_steps: int = 0
    hold_prob: float | None = None
    symmetric: bool = True
    clamp: float = 0.99

    def __post_init__(self):
        if self.target not in ("most_visited", "origin", "revisited"):
            raise ValueError(f"unknown target {self.target!r}")
        if self.theta is not None and not (math.isfinite(self.theta) and self.theta >= 0):
            raise ValueError("theta must be finite and nonnegative")
        if self.hold_steps < 0:
            raise ValueError("hold_steps must be nonnegative")
        if self.hold_steps and not (self.hold_prob is not None and 0 < self.hold_prob < 1):
            raise ValueError("a walk bias needs hold_prob in (0, 1)")
        if not 0 < self.clamp < 1:
            raise ValueError("clamp must lie in (0, 1)")

    @property
    def null(self) -> bool:
        return self.theta == 0 and self.hold_steps == 0


def _check_common(d, n, samples, seed):
    d = check_dimension(d)
    if n < 1:
        raise ValueError("n must be >= 1")
    if samples < 1:
        raise ValueError("samples must be >= 1")
    return d, int(n), int(samples), check_seed(seed)


def _layout(n: int, samples: int) -> list[int]:
    return chunk_sizes(samples, max(1, CHUNK_POSITIONS // n))


def _walk_groups(d, n, rows, seed, i):
    moves = simulate_moves(d, n - 1, rows, derive_rng(seed, i, _WALK))
    return group_sites(moves_to_keys(moves, d) if n > 1 else np.zeros((rows, 1), np.int64))


def _naive_chunk(d, n, dist, seed, xis):
    def run(task):
        i, rows = task
        g = _walk_groups(d, n, rows, seed, i)
        x = g.x_check(dist.sample(derive_rng(seed, i, _CHARGE), (rows, n)))
        return (x[:, None] >= xis[None, :]).sum(axis=0)
    return run


def naive_tail_curve(d: int, n: int, xis, dist: ChargeDistribution | None = None, *,
                     samples: int, seed: int, workers: int = 1) -> list[TailEstimate]:
    """Indicator estimates for several thresholds on one common sample set."""
    dist = rademacher() if dist is None else dist
    d, n, samples, seed = _check_common(d, n, samples, seed)
    xis = np.atleast_1d(np.asarray(xis, dtype=float))
    tasks = list(enumerate(_layout(n, samples)))
    hits = np.sum(parallel_map(_naive_chunk(d, n, dist, seed, xis), tasks, workers), axis=0)
    out = []
    for xi, k in zip(xis, hits):
        p = k / samples
        out.append(TailEstimate(probability=p, log_probability=math.log(p) if k else -math.inf,
                                stderr=math.sqrt(p * (1 - p) / samples), method="naive",
                                samples=samples, ess=float(samples), xi=float(xi), d=d, n=n,
                                dist=dist.name))
    return out


def naive_tail(d: int, n: int, xi: float, dist: ChargeDistribution | None = None, *,
               samples: int, seed: int, workers: int = 1) -> TailEstimate:
    """Indicator-mean estimate of ``P(X_n >= xi)`` with its binomial standard error."""
    return naive_tail_curve(d, n, [xi], dist, samples=samples, seed=seed, workers=workers)[0]


# --------------------------------------------------------------------------
# importance sampling
# --------------------------------------------------------------------------

def _biased_walk(d, n, rows, seed, i, plan: TiltPlan):
    """Move codes with the origin-hold bias, and the log likelihood ratio ``log dP/dQ``."""
    moves = simulate_moves(d, n - 1, rows, derive_rng(seed, i, _WALK))
    log_lr = np.zeros(rows)
    m = min(plan.hold_steps, n - 1)
    if m == 0:
        return moves, log_lr
    h = plan.hold_prob
    base = 1.0 / (2 * d + 1)
    hold_gain = math.log(base / h)
    move_gain = math.log(base / ((1 - h) / (2 * d)))
    u = derive_rng(seed, i, _BIAS).random((rows, m))
    steps = np.zeros((2 * d + 1, d), dtype=np.int64)
    for k in range(d):
        steps[2 * k, k], steps[2 * k + 1, k] = -1, 1
    pos = np.zeros((rows, d), dtype=np.int64)
    for t in range(m):
        home = ~pos.any(axis=1)
        hold = home & (u[:, t] < h)
        away = home & ~hold
        moves[hold, t] = 2 * d
        # remaining mass spread evenly over the 2d neighbours
        moves[away, t] = np.minimum(((u[away, t] - h) / (1 - h) * (2 * d)).astype(np.int64), 2 * d - 1)
        log_lr[hold] += hold_gain
        log_lr[away] += move_gain
        pos += steps[moves[:, t]]
    return moves, log_lr


def _auto_theta(pair: LegendrePair, xi: float, mass: np.ndarray, clamp: float) -> np.ndarray:
    """``I'(sqrt(xi / mass))``, clamped inside the domain of ``I'``."""
    x = np.sqrt(max(xi, 0.0) / np.maximum(mass, 1.0))
    if math.isfinite(pair.slope_bound):
        x = np.minimum(x, clamp * pair.slope_bound)
    uniq, inv = np.unique(x, return_inverse=True)
    return np.asarray(pair.inverse_gamma_prime(uniq), dtype=float).reshape(-1)[inv]


def _target_groups(g, plan: TiltPlan) -> np.ndarray:
    """Boolean mask over groups marking the tilted sites."""
    mask = np.zeros(len(g.counts), dtype=bool)
    if plan.target == "most_visited":
        mask[g.most_visited()] = True
    elif plan.target == "origin":
        mask[g.origin_group] = True
    else:
        mask[g.counts >= 2] = True
    return mask


def _tilted_chunk(d, n, xi, dist, pair, plan, seed):
    def run(task):
        i, rows = task
        if plan.hold_steps:
            moves, log_lr = _biased_walk(d, n, rows, seed, i, plan)
        else:
            moves, log_lr = simulate_moves(d, n - 1, rows, derive_rng(seed, i, _WALK)), np.zeros(rows)
        g = group_sites(moves_to_keys(moves, d) if n > 1 else np.zeros((rows, 1), np.int64))
        targ = _target_groups(g, plan)
        l = g.counts.astype(float)
        # sum of l^2 over each row's tilted sites sets the per-site mean shift
        mass = g.per_row(np.where(targ, l * l, 0.0))
        if plan.theta is not None:
            theta_row = np.full(rows, float(plan.theta))
        else:
            theta_row = np.zeros(rows)
            live = mass > 0
            theta_row[live] = _auto_theta(pair, xi, mass[live], plan.clamp)
        theta = np.where(targ, theta_row[g.row], 0.0)
        charges = dist.sample(derive_rng(seed, i, _CHARGE), (rows, n)).reshape(-1)
        sign = np.ones(len(theta))
        if plan.symmetric:
            sign = np.where(derive_rng(seed, i, _SIGN).random(len(theta)) < 0.5, -1.0, 1.0)
        active = theta != 0
        if active.any():
            pos_mask = active[g.group_of_position]
            charges[pos_mask] = dist.sample_tilted(derive_rng(seed, i, _TILT),
                                                   (sign * theta)[g.group_of_position[pos_mask]])
        q = g.local_charges(charges)
        x = g.per_row(q * q) - n
        uniq, inv = np.unique(theta, return_inverse=True)
        gam = np.asarray(dist.log_laplace(uniq), dtype=float).reshape(-1)[inv]
        if plan.symmetric:
            # mixture of the +theta and -theta tilts; log cosh is stable
            a = np.abs(theta * q)
            log_w = l * gam - (a + np.log1p(np.exp(-2 * a)) - math.log(2))
        else:
            log_w = l * gam - theta * q
        log_w = g.per_row(np.where(active, log_w, 0.0)) + log_lr
        return log_w, x >= xi, theta_row, mass
    return run


def tilted_tail(d: int, n: int, xi: float, dist: ChargeDistribution | None = None,
                plan: TiltPlan | None = None, *, samples: int, seed: int, workers: int = 1) -> TailEstimate:
    """Importance-sampling estimate of ``P(X_n >= xi)``.

    Charges on the target site are drawn from the tilt
    ``exp(theta eta - Gamma(theta))`` and each sample is weighted by the
    exact inverse likelihood ratio of everything that was biased. With
    ``theta = 0`` and no walk bias the draws and the result coincide with
    :func:`naive_tail` under the same seed.

    Raises
    ------
    WeightOverflow
        If any weight exceeds ``exp(700)``; the message suggests a tilt range.
    """
    dist = rademacher() if dist is None else dist
    plan = TiltPlan() if plan is None else plan
    d, n, samples, seed = _check_common(d, n, samples, seed)
    if plan.theta is not None and not math.isfinite(float(dist.log_laplace(plan.theta))):
        raise ValueError(f"theta={plan.theta} is outside the domain of the log-Laplace transform")
    pair = LegendrePair.from_distribution(dist)
    tasks = list(enumerate(_layout(n, samples)))
    parts = parallel_map(_tilted_chunk(d, n, float(xi), dist, pair, plan, seed), tasks, workers)
    log_w = np.concatenate([p[0] for p in parts])
    hit = np.concatenate([p[1] for p in parts])
    if log_w.max(initial=-np.inf) > LOG_WEIGHT_LIMIT:
        theta = np.concatenate([p[2] for p in parts])
        mass = np.concatenate([p[3] for p in parts])
        bad = log_w > LOG_WEIGHT_LIMIT
        # the tilted local times total at most sqrt(mass) * (number of sites) <= mass
        lmax = float(mass[bad].max())
        hi = _theta_ceiling(dist, lmax)
        raise WeightOverflow(
            f"likelihood weights up to exp({log_w.max():.1f}) at theta={float(theta[bad].max()):.4g}; "
            f"use theta in [0, {hi:.4g}] or a milder walk bias")
    log_s = math.log(samples)
    if not log_w.any():
        # no tilt was applied: the plain indicator mean, bit for bit
        k = int(hit.sum())
        p = k / samples
        log_p = math.log(p) if k else -math.inf
        se = math.sqrt(p * (1 - p) / samples)
    elif hit.any():
        lw = log_w[hit]
        log_p = float(logsumexp(lw)) - log_s
        # relative variance of the weighted indicator mean
        rel2 = math.exp(float(logsumexp(2 * lw)) - log_s - 2 * log_p) - 1.0
        p = math.exp(log_p)
        se = p * math.sqrt(max(rel2, 0.0) / samples)
    else:
        log_p, p, se = -math.inf, 0.0, 0.0
    ess = math.exp(2 * float(logsumexp(log_w)) - float(logsumexp(2 * log_w)))
    return TailEstimate(probability=p, log_probability=log_p, stderr=se, method="tilted",
                        samples=samples, ess=min(ess, float(samples)), xi=float(xi), d=d, n=n,
                        dist=dist.name, theta=plan.theta)


def _theta_ceiling(dist: ChargeDistribution, l: float) -> float:
    lo, hi = 0.0, 1.0
    while float(dist.log_laplace(hi)) * l < LOG_WEIGHT_LIMIT and hi < 1e6:
        hi *= 2
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if float(dist.log_laplace(mid)) * l < LOG_WEIGHT_LIMIT:
            lo = mid
        else:
            hi = mid
    return lo


# --------------------------------------------------------------------------
# rate curve
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RateCurveRow:
    n: int
    xi: float
    power: float
    normalized_log_tail: float
    ci_low: float
    ci_high: float
    predicted: float
    probability: float
    log_probability: float
    stderr: float
    ess: float
    samples: int

    def as_dict(self) -> dict:
        return asdict(self)


def pinning_plan(d: int, xi: float) -> TiltPlan:
    """Origin tilt with the walk held at home for about ``sqrt(xi / (2 log(2d+1)))`` steps.

    Holding costs ``log(2d+1)`` per extra visit and the tilt costs about
    ``xi / (2 l)``; the hold length balances the two.
    """
    m = max(1, math.ceil(math.sqrt(xi / (2 * math.log(2 * d + 1)))))
    return TiltPlan(target="origin", hold_steps=m, hold_prob=m / (m + 1.0))


def rate_curve(d: int, dist: ChargeDistribution, n_list, power: float, *, samples: int, seed: int,
               plan: TiltPlan | None = None, workers: int = 1, strict: bool = False) -> list[RateCurveRow]:
    """``-log p_hat / sqrt(xi_n)`` for ``xi_n = n^power`` next to the predicted limit.

    Report-only: no convergence claim is made at these sizes. Each ``n``
    uses its own child seed. The interval maps ``p_hat +- 2 SE`` through
    the normalisation and is infinite when the lower end is not positive.
    """
    if not 2 / 3 < power < 2:
        raise ValueError("power must lie strictly between 2/3 and 2")
    predicted = rate_constant(dist, d, strict=strict)
    rows = []
    for k, n in enumerate(n_list):
        xi = float(n) ** power
        pl = pinning_plan(d, xi) if plan is None else plan
        est = tilted_tail(d, n, xi, dist, pl, samples=samples, seed=child_seed(seed, k), workers=workers)
        root = math.sqrt(xi)
        val = -est.log_probability / root
        lo_p, hi_p = est.probability - 2 * est.stderr, est.probability + 2 * est.stderr
        ci_low = -math.log(min(hi_p, 1.0)) / root if hi_p > 0 else math.inf
        ci_high = -math.log(lo_p) / root if lo_p > 0 else math.inf
        rows.append(RateCurveRow(n=int(n), xi=xi, power=power, normalized_log_tail=val, ci_low=ci_low,
                                 ci_high=ci_high, predicted=float(predicted), probability=est.probability,
                                 log_probability=est.log_probability, stderr=est.stderr, ess=est.ess,
                                 samples=samples))
    return rows
