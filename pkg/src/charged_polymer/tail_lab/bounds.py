"""Empirical checks of the tail bounds' functional forms.

The bounds hold with unspecified constants, so every check fits the
constants from data and compares shapes: decay constants must come out
positive and the empirical tails must sit inside the fitted envelopes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .._rng import check_seed, chunk_sizes, derive_rng, parallel_map
from ..charge_models import ChargeDistribution, Gaussian, rademacher
from ..lattice_walk import LatticeConstants, check_dimension, first_return_times, green_constants
from ..lattice_walk import moves_to_coordinates, simulate_moves

__all__ = [
    "BoundCheckReport",
    "wilson_interval",
    "single_site",
    "plus_shape",
    "cube",
    "check_concentration",
    "concentration_contrast",
    "check_zeta_regimes",
    "check_nagaev",
    "check_return_tail",
]

#: half-width of every interval, in standard deviations
Z = 3.0
#: points with fewer hits are left out of fits
MIN_HITS = 20


@dataclass(frozen=True)
class BoundCheckReport:
    """Result of one bound check.

    ``frequency`` is the raw empirical tail on ``t`` (no monotone
    smoothing) with Wilson intervals at ``Z`` standard deviations.
    ``reference`` holds an exact curve when one is known. ``fitted`` holds
    fitted constants and ``checks`` the outcome of each comparison rule.
    """

    name: str
    t: np.ndarray
    frequency: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    reference: np.ndarray | None
    fitted: dict
    checks: dict
    notes: tuple = ()
    extra: dict = field(default_factory=dict, repr=False)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def rows(self) -> list[dict]:
        """One record per grid point, for CSV output."""
        out = []
        for k, t in enumerate(self.t):
            out.append({
                "check": self.name, "t": float(t), "frequency": float(self.frequency[k]),
                "ci_low": float(self.ci_low[k]), "ci_high": float(self.ci_high[k]),
                "reference": float(self.reference[k]) if self.reference is not None else math.nan,
            })
        return out

    def summary(self) -> dict:
        return {"check": self.name, "passed": self.passed, **{f"fit_{k}": v for k, v in self.fitted.items()},
                **{f"rule_{k}": bool(v) for k, v in self.checks.items()}, "notes": "; ".join(self.notes)}


def wilson_interval(hits, total: int, z: float = Z) -> tuple[np.ndarray, np.ndarray]:
    """Wilson score interval for binomial proportions, vectorised over ``hits``."""
    hits = np.asarray(hits, dtype=float)
    p = hits / total
    den = 1 + z * z / total
    centre = (p + z * z / (2 * total)) / den
    half = z * np.sqrt(p * (1 - p) / total + z * z / (4 * total * total)) / den
    return np.clip(centre - half, 0, 1), np.clip(centre + half, 0, 1)


def _check_grid(t_grid) -> np.ndarray:
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size < 3 or not np.all(np.isfinite(t)) or np.any(np.diff(t) <= 0):
        raise ValueError("the t grid needs at least three strictly increasing finite points")
    return t


def _survival_counts(values: np.ndarray, t: np.ndarray, strict: bool = False) -> np.ndarray:
    """Number of ``values >= t`` (or ``> t`` when ``strict``) for each ``t``."""
    v = np.sort(values)
    return len(v) - np.searchsorted(v, t, side="right" if strict else "left")


def _fit_log_slope(x: np.ndarray, hits: np.ndarray, total: int) -> tuple[float, float, float] | None:
    """Least-squares line through ``(x, log frequency)`` on well-populated points.

    Returns ``(slope, intercept, rms residual)`` or ``None`` with fewer than two points.
    """
    use = hits >= MIN_HITS
    if use.sum() < 2:
        return None
    y = np.log(hits[use] / total)
    A = np.column_stack([x[use], np.ones(use.sum())])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    res = y - A @ coef
    return float(coef[0]), float(coef[1]), float(np.sqrt(np.mean(res**2)))


# --------------------------------------------------------------------------
# charge and occupation of a finite set
# --------------------------------------------------------------------------

def single_site(d: int) -> np.ndarray:
    return np.zeros((1, d), dtype=np.int64)


def plus_shape(d: int) -> np.ndarray:
    """The origin and its ``2d`` neighbours."""
    e = np.eye(d, dtype=np.int64)
    return np.vstack([np.zeros((1, d), np.int64), e, -e])


def cube(d: int, side: int = 3) -> np.ndarray:
    """``side^d`` sites centred on the origin (``side`` odd)."""
    if side < 1 or side % 2 == 0:
        raise ValueError("side must be a positive odd integer")
    r = side // 2
    axes = [np.arange(-r, r + 1)] * d
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d).astype(np.int64)


def _set_masses(d, sites, n, samples, seed, dist, workers):
    sites = np.asarray(sites, dtype=np.int64).reshape(-1, d)
    span = 2 * n + 1
    if span**d >= 2**62:
        raise ValueError("walk too long for site encoding")
    weights = span ** np.arange(d, dtype=np.int64)
    site_codes = (sites + n) @ weights
    rows = max(1, (1 << 21) // n)

    def run(task):
        i, size = task
        coords = moves_to_coordinates(simulate_moves(d, n - 1, size, derive_rng(seed, i, 0)), d)
        inside = np.isin((coords + n) @ weights, site_codes)
        charges = dist.sample(derive_rng(seed, i, 1), (size, n))
        return np.where(inside, charges, 0).sum(axis=1), inside.sum(axis=1)

    parts = parallel_map(run, list(enumerate(chunk_sizes(samples, rows))), workers)
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def check_concentration(d: int, sites, n: int, t_grid, samples: int, seed: int,
                        dist: ChargeDistribution | None = None, occupation_grid=None,
                        workers: int = 1) -> BoundCheckReport:
    """Tails of the charge ``q(L)`` and the occupation ``l(L)`` of a site set ``L``.

    The charge tail is fitted as ``exp(-kappa t / |L|^{1/d})`` and the
    occupation tail as ``exp(-kappa' t / |L|^{2/d})``. Rules: the charge
    constant exceeds 0.01, the occupation constant is positive, and at every
    grid point the lower confidence limit of the charge tail lies below
    ``exp(-(kappa/2) t / |L|^{1/d})``.
    """
    d = check_dimension(d)
    seed = check_seed(seed)
    dist = rademacher() if dist is None else dist
    t = _check_grid(t_grid)
    t_occ = t if occupation_grid is None else _check_grid(occupation_grid)
    sites = np.unique(np.asarray(sites, dtype=np.int64).reshape(-1, d), axis=0)
    size = len(sites)
    if size == 0:
        raise ValueError("the site set is empty")
    q, l = _set_masses(d, sites, int(n), int(samples), seed, dist, workers)
    hits_q = _survival_counts(q, t)
    hits_l = _survival_counts(l, t_occ)
    lo, hi = wilson_interval(hits_q, samples)
    s_charge = t / size ** (1 / d)
    s_occ = t_occ / size ** (2 / d)
    pos = t > 0
    fit_q = _fit_log_slope(s_charge[pos], hits_q[pos], samples)
    fit_l = _fit_log_slope(s_occ[t_occ > 0], hits_l[t_occ > 0], samples)
    kappa_q = -fit_q[0] if fit_q else math.nan
    kappa_l = -fit_l[0] if fit_l else math.nan
    envelope = np.exp(-(kappa_q / 2) * s_charge)
    checks = {
        "charge_decay_positive": bool(kappa_q > 0.01),
        "occupation_decay_positive": bool(kappa_l > 0),
        "below_half_kappa_envelope": bool(np.all(lo[pos] <= envelope[pos])),
    }
    fitted = {"kappa_charge": kappa_q, "kappa_occupation": kappa_l, "set_size": size,
              "charge_rms": fit_q[2] if fit_q else math.nan,
              "occupation_rms": fit_l[2] if fit_l else math.nan}
    lo_l, hi_l = wilson_interval(hits_l, samples)
    extra = {"occupation_t": t_occ, "occupation_frequency": hits_l / samples,
             "occupation_ci": (lo_l, hi_l), "charge_hits": hits_q, "occupation_hits": hits_l,
             "samples": samples}
    return BoundCheckReport(name=f"concentration[|L|={size}]", t=t, frequency=hits_q / samples,
                            ci_low=lo, ci_high=hi, reference=None, fitted=fitted, checks=checks,
                            extra=extra)


def _pooled_rms(reports, exponent_of, which):
    """RMS residual of log-tails against ``t / |L|^e`` with one slope and per-set intercepts."""
    xs, ys, groups = [], [], []
    for g, rep in enumerate(reports):
        if which == "charge":
            t, hits = rep.t, rep.extra["charge_hits"]
        else:
            t, hits = rep.extra["occupation_t"], rep.extra["occupation_hits"]
        use = (hits >= MIN_HITS) & (t > 0)
        xs.append(t[use] / rep.fitted["set_size"] ** exponent_of)
        ys.append(np.log(hits[use] / rep.extra["samples"]))
        groups.append(np.full(use.sum(), g))
    x, y, grp = np.concatenate(xs), np.concatenate(ys), np.concatenate(groups)
    A = np.column_stack([x] + [(grp == g).astype(float) for g in range(len(reports))])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return float(np.sqrt(np.mean((y - A @ coef) ** 2)))


def concentration_contrast(d: int, n: int, t_grid, samples: int, seed: int, occupation_grid=None,
                           site_sets=None, dist: ChargeDistribution | None = None,
                           workers: int = 1) -> dict:
    """Which scaling of ``t`` collapses the tails across set sizes.

    For each of the site sets (default: one site, the plus shape and the
    3-cube) the tails are computed; then a common slope with per-set
    intercepts is fitted against ``t/|L|^{1/d}`` and against ``t/|L|^{2/d}``.
    The charge tails should fit better on the first scale and the
    occupation tails on the second.
    """
    if site_sets is None:
        site_sets = [single_site(d), plus_shape(d), cube(d)]
    reports = [check_concentration(d, s, n, t_grid, samples, seed, dist=dist,
                                   occupation_grid=occupation_grid, workers=workers) for s in site_sets]
    rms = {
        "charge_root_d": _pooled_rms(reports, 1 / d, "charge"),
        "charge_root2_d": _pooled_rms(reports, 2 / d, "charge"),
        "occupation_root_d": _pooled_rms(reports, 1 / d, "occupation"),
        "occupation_root2_d": _pooled_rms(reports, 2 / d, "occupation"),
    }
    checks = {
        "charge_prefers_1_over_d": rms["charge_root_d"] < rms["charge_root2_d"],
        "occupation_prefers_2_over_d": rms["occupation_root2_d"] < rms["occupation_root_d"],
    }
    return {"reports": reports, "rms": rms, "checks": checks, "passed": all(checks.values())}


# --------------------------------------------------------------------------
# zeta(n) and the Nagaev-type bound
# --------------------------------------------------------------------------

def _row_sums(dist, n, samples, seed, transform, workers):
    rows = max(1, (1 << 21) // n)

    def run(task):
        i, size = task
        eta = dist.sample(derive_rng(seed, i), (size, n))
        return transform(eta)

    parts = parallel_map(run, list(enumerate(chunk_sizes(samples, rows))), workers)
    return parts


def check_zeta_regimes(dist: ChargeDistribution, n: int, t_grid, samples: int, seed: int,
                       beta0: float = 1.0, workers: int = 1) -> BoundCheckReport:
    """Tail of ``zeta(n) = (sum eta / sqrt n)^2`` in its two regimes.

    Below ``beta0 n`` the log-tail is fitted linearly in ``t``. Above it, for
    tail class ``alpha < 2`` the fit is linear in ``t^{alpha/2} (beta0 n)^{1 - alpha/2}``;
    for ``alpha = 2`` one linear fit covers the whole grid. Gaussian charges
    have the exact reference ``P(chi^2_1 > t / variance)``. Bounded charges
    satisfy ``zeta(n) <= n * bound^2`` and their tail must vanish beyond it.
    A regime with too few hits to fit is flagged, not failed.
    """
    seed = check_seed(seed)
    n = int(n)
    t = _check_grid(t_grid)
    parts = _row_sums(dist, n, int(samples), seed, lambda eta: eta.sum(axis=1) ** 2 / n, workers)
    z = np.concatenate(parts)
    hits = _survival_counts(z, t, strict=True)
    lo, hi = wilson_interval(hits, samples)
    alpha = float(dist.tail_class)
    split = beta0 * n
    small = (t > 0) & (t < split)
    notes, fitted, checks = [], {"alpha": alpha, "boundary": split}, {}
    reference = None
    if alpha >= 2:
        fit = _fit_log_slope(t[t > 0], hits[t > 0], samples)
        fitted["kappa"] = -fit[0] if fit else math.nan
        checks["decay_positive"] = bool(fit is not None and fitted["kappa"] > 0)
    else:
        fit = _fit_log_slope(t[small], hits[small], samples)
        fitted["kappa_small"] = -fit[0] if fit else math.nan
        checks["small_t_decay_positive"] = bool(fit is not None and fitted["kappa_small"] > 0)
        large = t >= split
        feat = t[large] ** (alpha / 2) * split ** (1 - alpha / 2)
        fit_l = _fit_log_slope(feat, hits[large], samples)
        fitted["kappa_large"] = -fit_l[0] if fit_l else math.nan
        if fit_l is None:
            notes.append("too few large-t hits to fit; interval widened to [0, upper limit]")
            lo = np.where(large, 0.0, lo)
        else:
            checks["large_t_decay_positive"] = bool(fitted["kappa_large"] > 0)
    if isinstance(dist, Gaussian):
        reference = stats.chi2.sf(t / dist.variance, df=1)
        checks["reference_within_ci"] = bool(np.all((reference >= lo) & (reference <= hi)))
        fit_ref = np.polyfit(t[t > 0], np.log(reference[t > 0]), 1)
        fitted["kappa_reference"] = -float(fit_ref[0])
    if math.isfinite(dist.slope_bound):
        cap = n * dist.slope_bound**2
        beyond = t >= cap
        fitted["support_cap"] = cap
        checks["zero_beyond_support"] = bool(np.all(hits[beyond] == 0))
    return BoundCheckReport(name=f"zeta_regimes[{dist.name}]", t=t, frequency=hits / samples, ci_low=lo,
                            ci_high=hi, reference=reference, fitted=fitted, checks=checks, notes=tuple(notes))


def check_nagaev(dist: ChargeDistribution, n: int, t_grid, samples: int, seed: int,
                 workers: int = 1) -> BoundCheckReport:
    """``P(Y_1 + ... + Y_n >= t)`` for ``Y = eta^2 - 1`` against
    ``n P(Y > t/2) + exp(-t^2 / (20 n))``.

    The single-variable tail is estimated from all ``n * samples`` draws.
    The smallest constant ``C`` with left side ``<= C`` times right side
    on the grid is reported; the rule is that it is finite.
    """
    seed = check_seed(seed)
    n = int(n)
    t = _check_grid(t_grid)

    def transform(eta):
        y = eta * eta - 1.0
        return y.sum(axis=1), np.sort(y.reshape(-1))

    parts = _row_sums(dist, n, int(samples), seed, transform, workers)
    sums = np.concatenate([p[0] for p in parts])
    single = np.concatenate([p[1] for p in parts])
    hits = _survival_counts(sums, t)
    lo, hi = wilson_interval(hits, samples)
    lhs = hits / samples
    p1 = _survival_counts(single, t / 2, strict=True) / single.size
    rhs = n * p1 + np.exp(-t * t / (20 * n))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(lhs > 0, lhs / rhs, 0.0)
    c_y = float(ratio.max())
    reference = None
    if isinstance(dist, Gaussian):
        # sum of eta^2 is variance * chi^2_n
        reference = stats.chi2.sf((n + t) / dist.variance, df=n)
    checks = {"constant_finite": math.isfinite(c_y), "below_scaled_bound": bool(np.all(lhs <= c_y * rhs + 1e-15))}
    if reference is not None:
        checks["reference_within_ci"] = bool(np.all((reference >= lo) & (reference <= hi)))
    return BoundCheckReport(name=f"nagaev[{dist.name}]", t=t, frequency=lhs, ci_low=lo, ci_high=hi,
                            reference=reference, fitted={"C_Y": c_y}, checks=checks,
                            extra={"rhs": rhs, "single_tail": p1})


# --------------------------------------------------------------------------
# excursion lengths
# --------------------------------------------------------------------------

def check_return_tail(d: int, samples: int, horizon: int, seed: int, t_grid=None, times=None,
                      constants: LatticeConstants | None = None, band: float = 0.15,
                      workers: int = 1) -> BoundCheckReport:
    """``P(tau > t | tau < inf)`` for the first return time ``tau`` on log-log axes.

    With ``r`` the exact return probability and ``F(t)`` the empirical
    ``P(tau <= t)``, the conditional tail is ``(r - F(t)) / r``. Its log-log
    slope is compared with ``-(d/2 - 1)`` within ``band``; the band is a
    rule only for ``d = 3``. Precomputed ``times`` (0 = no return) may be
    passed to reuse a simulation.
    """
    d = check_dimension(d)
    if times is None:
        times = first_return_times(d, horizon, samples, seed, workers=workers)
    times = np.asarray(times)
    total = len(times)
    returned = times[times > 0]
    if len(returned) < 100:
        raise ValueError(f"only {len(returned)} returns observed; at least 100 are needed")
    if constants is None:
        constants = green_constants(d)
    r = constants.return_probability
    if t_grid is None:
        hi_t = max(horizon // 5, 10) if d == 3 else min(30, max(horizon // 5, 10))
        lo_t = 20 if d == 3 else 3
        t_grid = np.unique(np.geomspace(lo_t, hi_t, 15).astype(np.int64))
    t = _check_grid(t_grid)
    if t[-1] > horizon:
        raise ValueError("grid extends beyond the simulated horizon")
    f = np.searchsorted(np.sort(returned), t, side="right") / total
    tail = (r - f) / r
    se = np.sqrt(f * (1 - f) / total) / r
    lo, hi = tail - Z * se, tail + Z * se
    use = lo > 0
    slope = math.nan
    if use.sum() >= 2:
        slope = float(np.polyfit(np.log(t[use]), np.log(tail[use]), 1)[0])
    target = -(d / 2 - 1)
    checks = {"nonincreasing_within_ci": bool(np.all(tail[1:] <= tail[:-1] + Z * (se[1:] + se[:-1])))}
    if d == 3:
        checks["exponent_in_band"] = bool(abs(slope - target) <= band)
    fitted = {"exponent": slope, "target": target, "band": band, "return_probability": r,
              "observed_return_frequency": len(returned) / total}
    return BoundCheckReport(name=f"return_tail[d={d}]", t=t, frequency=tail, ci_low=lo, ci_high=hi,
                            reference=None, fitted=fitted, checks=checks)
