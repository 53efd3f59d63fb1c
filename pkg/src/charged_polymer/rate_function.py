"""Legendre transforms of log-Laplace functions and the variational identities built on them.

The rate ``I(x) = sup_y [x y - Gamma(y)]`` is computed by solving
``Gamma'(y) = x`` with a geometrically expanded bracket followed by Brent's
method and one Newton step. Derivatives of ``I`` come from closed forms when
the law supplies them, else from central differences with step
``tol**(1/3) * max(1, |x|)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq, minimize, minimize_scalar

from .charge_models import ChargeDistribution
from .errors import HypothesisNotCertified
from .lattice_walk import LatticeConstants, green_constants

__all__ = [
    "LegendrePair",
    "LegendrePoint",
    "ShapeCertificate",
    "PileProblem",
    "PileSolution",
    "PinProblem",
    "PinSolution",
    "legendre",
    "legendre_point",
    "gamma_inverse",
    "check_duality_identity",
    "certify_sqrt_shapes",
    "solve_pile",
    "solve_pile_bruteforce",
    "solve_pin",
    "solve_pin_golden",
    "rate_constant",
]

_BRACKET_LIMIT = 1e8


@dataclass(frozen=True)
class LegendrePoint:
    x: float
    value: float
    argmax: float
    status: str  # "interior", "boundary" or "infinite"


@dataclass(frozen=True)
class ShapeCertificate:
    gamma_sqrt_convex: bool
    rate_sqrt_concave: bool
    worst_gamma_slope_drop: float
    worst_rate_slope_rise: float
    gamma_grid: tuple[float, float]
    rate_grid: tuple[float, float]

    @property
    def certified(self) -> bool:
        return self.gamma_sqrt_convex and self.rate_sqrt_concave


@dataclass(frozen=True, eq=False)
class LegendrePair:
    """A convex, even log-Laplace function with its Legendre transform.

    Parameters
    ----------
    gamma, gamma_prime, gamma_second : callable
        ``Gamma`` and its derivatives, vectorised over numpy arrays.
    slope_bound : float
        ``sup Gamma'``; finite for bounded charges, where ``I`` is finite
        only on ``[-slope_bound, slope_bound]``.
    rate_closed, rate_prime_closed : callable, optional
        Closed forms of ``I`` and ``I'`` when known.
    tol : float
        Root-finding tolerance; also sets the finite-difference step.
    """

    gamma: Callable
    gamma_prime: Callable
    gamma_second: Callable
    slope_bound: float = math.inf
    rate_closed: Callable | None = None
    rate_prime_closed: Callable | None = None
    tol: float = 1e-12
    name: str = "custom"
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def from_distribution(cls, dist: ChargeDistribution, closed_form: bool = True, tol: float = 1e-12):
        has_closed = closed_form and dist.rate(0.0) is not None
        return cls(
            gamma=dist.log_laplace,
            gamma_prime=dist.log_laplace_prime,
            gamma_second=dist.log_laplace_second,
            slope_bound=dist.slope_bound,
            rate_closed=dist.rate if has_closed else None,
            rate_prime_closed=dist.rate_prime if has_closed else None,
            tol=tol,
            name=dist.name,
        )

    # -- conjugate point -------------------------------------------------
    def conjugate_point(self, x: float) -> LegendrePoint:
        return legendre_point(self, x)

    def rate(self, x):
        """``I(x)``; vectorised."""
        x = np.asarray(x, dtype=float)
        if self.rate_closed is not None:
            out = np.asarray(self.rate_closed(x), dtype=float)
        else:
            out = np.vectorize(lambda v: legendre_point(self, v).value, otypes=[float])(x)
        return out[()] if out.ndim == 0 else out

    def rate_prime(self, x):
        """``I'(x)``; closed form or central differences of ``I``."""
        x = np.asarray(x, dtype=float)
        if self.rate_prime_closed is not None:
            out = np.asarray(self.rate_prime_closed(x), dtype=float)
        else:
            h = self.tol ** (1 / 3) * np.maximum(1.0, np.abs(x))
            out = (self.rate(x + h) - self.rate(x - h)) / (2 * h)
        return out[()] if out.ndim == 0 else out

    def inverse_gamma_prime(self, x):
        """Exact maximiser ``y*`` with ``Gamma'(y*) = x`` (the derivative of ``I`` at ``x``)."""
        x = np.asarray(x, dtype=float)
        out = np.vectorize(lambda v: legendre_point(self, v).argmax, otypes=[float])(x)
        return out[()] if out.ndim == 0 else out

    @cached_property
    def certificate(self) -> "ShapeCertificate":
        return certify_sqrt_shapes(self)


def _expand_bracket(f, target: float, start: float = 1.0) -> float:
    """Smallest ``hi = start * 2^k`` with ``f(hi) >= target``; ``f`` increasing on ``[0, inf)``."""
    hi = start
    while f(hi) < target:
        hi *= 2.0
        if hi > _BRACKET_LIMIT:
            raise ValueError(f"no bracket found below {_BRACKET_LIMIT:g} for target {target!r}")
    return hi


def legendre_point(pair: LegendrePair, x: float) -> LegendrePoint:
    """Maximiser and value of ``y -> x y - Gamma(y)``.

    For ``|x| = slope_bound`` the supremum is approached as ``y -> inf`` and
    is reported with status ``"boundary"``; beyond it the value is ``inf``.
    """
    x = float(x)
    sign = 1.0 if x >= 0 else -1.0
    ax = abs(x)
    if ax == 0.0:
        return LegendrePoint(x, 0.0, 0.0, "interior")
    bound = pair.slope_bound
    if ax > bound:
        return LegendrePoint(x, math.inf, math.inf, "infinite")
    if ax == bound:
        y, prev = 1.0, -math.inf
        val = ax * y - float(pair.gamma(y))
        while abs(val - prev) > pair.tol * max(1.0, abs(val)) and y < _BRACKET_LIMIT:
            prev = val
            y *= 2.0
            val = ax * y - float(pair.gamma(y))
        return LegendrePoint(x, val, sign * math.inf, "boundary")
    gp = lambda y: float(pair.gamma_prime(y))
    hi = _expand_bracket(gp, ax)
    y = brentq(lambda v: gp(v) - ax, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    g2 = float(pair.gamma_second(y))
    if g2 > 0:
        y_newton = y - (gp(y) - ax) / g2
        if 0.0 <= y_newton <= hi:
            y = y_newton
    value = ax * y - float(pair.gamma(y))
    return LegendrePoint(x, value, sign * y, "interior")


def legendre(pair: LegendrePair | ChargeDistribution, x):
    """``I(x) = sup_y [x y - Gamma(y)]`` by monotone root-finding on ``Gamma'``."""
    if isinstance(pair, ChargeDistribution):
        pair = LegendrePair.from_distribution(pair, closed_form=False)
    x = np.asarray(x, dtype=float)
    out = np.vectorize(lambda v: legendre_point(pair, v).value, otypes=[float])(x)
    return out[()] if out.ndim == 0 else out


def gamma_inverse(pair: LegendrePair | ChargeDistribution, chi: float) -> float:
    """The unique ``y >= 0`` with ``Gamma(y) = chi``."""
    if isinstance(pair, ChargeDistribution):
        pair = LegendrePair.from_distribution(pair)
    chi = float(chi)
    if chi < 0:
        raise ValueError("chi must be nonnegative")
    if chi == 0:
        return 0.0
    g = lambda y: float(pair.gamma(y))
    try:
        hi = _expand_bracket(g, chi)
    except ValueError:
        raise ValueError(f"chi={chi} lies above the range of Gamma on [0, inf)") from None
    y = brentq(lambda v: g(v) - chi, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    g1 = float(pair.gamma_prime(y))
    if g1 > 0:
        y_newton = y - (g(y) - chi) / g1
        if 0.0 <= y_newton <= hi:
            y = y_newton
    return y


def check_duality_identity(pair: LegendrePair, grid) -> float:
    """Max over ``grid`` of ``|-I(x) + x I'(x) - Gamma(I'(x))|``."""
    x = np.asarray(grid, dtype=float)
    ip = np.asarray(pair.rate_prime(x), dtype=float)
    res = np.abs(-np.asarray(pair.rate(x)) + x * ip - np.asarray(pair.gamma(ip)))
    return float(np.max(res))


def _slope_changes(x: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Differences of successive divided-difference slopes, normalised by slope scale."""
    s = np.diff(f) / np.diff(x)
    scale = np.maximum(np.abs(s[1:]), np.abs(s[:-1])) + 1e-300
    return np.diff(s) / scale


def _default_rate_range(pair: LegendrePair) -> tuple[float, float]:
    hi = 25.0 if math.isinf(pair.slope_bound) else min(25.0, (0.95 * pair.slope_bound) ** 2)
    return 1e-3 * min(1.0, hi), hi


def certify_sqrt_shapes(pair: LegendrePair, grid=None, rate_grid=None, points: int = 256,
                        rtol: float = 1e-6) -> ShapeCertificate:
    """Grid test of convexity of ``x -> Gamma(sqrt x)`` and concavity of ``x -> I(sqrt x)``.

    Convexity is judged by nondecreasing divided-difference slopes, allowing
    relative drops of ``rtol`` for round-off; concavity symmetrically.
    """
    if grid is None:
        grid = np.geomspace(1e-3, 25.0, points)
    if rate_grid is None:
        lo, hi = _default_rate_range(pair)
        rate_grid = np.geomspace(lo, hi, points)
    gx = np.asarray(grid, dtype=float)
    rx = np.asarray(rate_grid, dtype=float)
    if np.any(gx <= 0) or np.any(rx <= 0):
        raise ValueError("grids must be positive")
    g_changes = _slope_changes(gx, np.asarray(pair.gamma(np.sqrt(gx)), dtype=float))
    r_changes = _slope_changes(rx, np.asarray(pair.rate(np.sqrt(rx)), dtype=float))
    worst_g = float(-g_changes.min()) if g_changes.size else 0.0
    worst_r = float(r_changes.max()) if r_changes.size else 0.0
    return ShapeCertificate(
        gamma_sqrt_convex=bool(worst_g <= rtol),
        rate_sqrt_concave=bool(worst_r <= rtol),
        worst_gamma_slope_drop=worst_g,
        worst_rate_slope_rise=worst_r,
        gamma_grid=(float(gx.min()), float(gx.max())),
        rate_grid=(float(rx.min()), float(rx.max())),
    )


def _require_certified(pair: LegendrePair, what: str) -> None:
    cert = pair.certificate
    if not cert.certified:
        raise HypothesisNotCertified(
            f"{what} needs x -> Gamma(sqrt x) convex; certification of {pair.name!r} failed "
            f"(Gamma slope drop {cert.worst_gamma_slope_drop:.3g}, "
            f"rate slope rise {cert.worst_rate_slope_rise:.3g})"
        )


# --------------------------------------------------------------------------
# Pile problem: min sum lam I(kappa) subject to sum lam^2 kappa^2 >= gamma^2
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PileProblem:
    weights: tuple[float, ...]
    target: float

    def __post_init__(self):
        w = tuple(float(v) for v in self.weights)
        if not w:
            raise ValueError("the site set must be nonempty")
        if any(not v > 0 for v in w):
            raise ValueError("all weights must be positive")
        if self.target < 0:
            raise ValueError("target must be nonnegative")
        object.__setattr__(self, "weights", w)


@dataclass(frozen=True)
class PileSolution:
    value: float
    kappa: np.ndarray
    grid_error: float = 0.0


def solve_pile(problem: PileProblem, pair: LegendrePair, require_certified: bool = True) -> PileSolution:
    """Closed-form minimiser: all charge on the heaviest site.

    Value ``(max lam) I(gamma / max lam)``; ``kappa`` vanishes off the
    heaviest site (the first one on ties) and ``lam kappa = gamma`` on it.
    """
    if require_certified:
        _require_certified(pair, "the pile reduction")
    lam = np.asarray(problem.weights)
    star = int(np.argmax(lam))
    kappa = np.zeros_like(lam)
    if problem.target == 0:
        return PileSolution(0.0, kappa)
    kappa[star] = problem.target / lam[star]
    return PileSolution(float(lam[star] * pair.rate(kappa[star])), kappa)


def _sphere_points(m: int, res: int) -> np.ndarray:
    """Grid on the positive orthant of the unit sphere in R^m via hyperspherical angles."""
    if m == 1:
        return np.ones((1, 1))
    ang = np.linspace(0.0, np.pi / 2, res)
    mesh = np.stack(np.meshgrid(*([ang] * (m - 1)), indexing="ij"), axis=-1).reshape(-1, m - 1)
    return _angles_to_sphere(mesh)


def _angles_to_sphere(angles: np.ndarray) -> np.ndarray:
    angles = np.atleast_2d(angles)
    n, k = angles.shape
    out = np.ones((n, k + 1))
    sin_prod = np.ones(n)
    for i in range(k):
        out[:, i] = sin_prod * np.cos(angles[:, i])
        sin_prod = sin_prod * np.sin(angles[:, i])
    out[:, k] = sin_prod
    return np.abs(out)


def solve_pile_bruteforce(problem: PileProblem, pair: LegendrePair, resolution: int = 41,
                          refine: bool = True) -> PileSolution:
    """Grid search over the constraint surface, then a local polish.

    ``I`` is increasing on ``[0, inf)``, so a minimiser satisfies the
    constraint with equality; the surface is parametrised as
    ``kappa = gamma u / lam`` with ``u`` on the positive unit sphere. ``I``
    is tabulated once on ``[0, gamma / min lam]`` and splined.

    ``grid_error`` is the gap between the grid minimum at ``resolution`` and
    at roughly half of it, a coarse-resolution flag.
    """
    lam = np.asarray(problem.weights)
    m = lam.size
    if m > 4:
        raise ValueError("brute force is limited to at most 4 sites")
    gamma = problem.target
    if gamma == 0:
        return PileSolution(0.0, np.zeros(m))
    kmax = gamma / lam.min()
    knots = np.linspace(0.0, kmax, 2001)
    table = np.asarray(pair.rate(knots), dtype=float)
    finite = np.isfinite(table)
    spline = CubicSpline(knots[finite], table[finite])
    last = knots[finite][-1]

    def rate_of(k):
        k = np.asarray(k)
        return np.where(k <= last + 1e-12, spline(np.minimum(k, last)), np.inf)

    def objective(u):
        kap = gamma * u / lam
        return np.sum(lam * rate_of(kap), axis=-1)

    def search(res):
        pts = _sphere_points(m, res)
        vals = objective(pts)
        i = int(np.argmin(vals))
        return float(vals[i]), pts[i]

    best, u_best = search(resolution)
    coarse, _ = search(max(3, resolution // 2 + 1))
    if refine and m > 1:
        def f(angles):
            return float(objective(_angles_to_sphere(angles))[0])
        # recover angles of u_best
        ang0 = []
        rest = 1.0
        for i in range(m - 1):
            c = u_best[i] / rest if rest > 0 else 1.0
            a = math.acos(min(1.0, max(-1.0, c)))
            ang0.append(a)
            rest = rest * math.sin(a)
        res = minimize(f, np.array(ang0), method="L-BFGS-B", bounds=[(0.0, np.pi / 2)] * (m - 1))
        if res.fun < best:
            best, u_best = float(res.fun), _angles_to_sphere(res.x)[0]
    return PileSolution(best, gamma * u_best / lam, grid_error=abs(coarse - best))


# --------------------------------------------------------------------------
# Pin problem: inf_lam [alpha lam + lam I(beta / lam)] = beta Gamma^{-1}(alpha)
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PinProblem:
    alpha: float
    beta: float
    pair: LegendrePair

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError("alpha and beta must be positive")


@dataclass(frozen=True)
class PinSolution:
    value: float
    lambda_star: float
    #: ``beta / lambda_star = Gamma'(Gamma^{-1}(alpha))``, the optimal mean charge per visit
    x_star: float


def _pin_objective(problem: PinProblem, lam: float) -> float:
    if lam <= 0:
        return math.inf
    return problem.alpha * lam + lam * float(problem.pair.rate(problem.beta / lam))


def solve_pin(problem: PinProblem) -> PinSolution:
    y = gamma_inverse(problem.pair, problem.alpha)
    x_star = float(problem.pair.gamma_prime(y))
    return PinSolution(value=problem.beta * y, lambda_star=problem.beta / x_star, x_star=x_star)


def solve_pin_golden(problem: PinProblem, xtol: float = 1e-10) -> PinSolution:
    """Direct golden-section minimisation of ``alpha lam + lam I(beta/lam)``."""
    # golden section in log(lam) keeps the bracket well scaled; the scan uses
    # the same parametrisation so the bracket values are the ones the search sees
    g = lambda s: _pin_objective(problem, math.exp(s))
    grid = math.log(problem.beta) + np.linspace(math.log(1e-6), math.log(1e6), 241)
    vals = np.array([g(v) for v in grid])
    i = int(np.argmin(vals))
    i = min(max(i, 1), len(grid) - 2)
    res = minimize_scalar(g, bracket=(grid[i - 1], grid[i], grid[i + 1]), method="golden", tol=xtol)
    lam = math.exp(res.x)
    return PinSolution(value=float(res.fun), lambda_star=lam, x_star=problem.beta / lam)


def rate_constant(dist: ChargeDistribution | LegendrePair, d: int, strict: bool = True,
                  constants: LatticeConstants | None = None) -> float:
    """``Gamma^{-1}(chi_d)``, the decay rate of ``P(X_n >= xi_n)`` on the ``sqrt(xi_n)`` scale.

    With ``strict`` the convexity hypothesis is enforced and uncertified laws
    raise :class:`HypothesisNotCertified`; ``strict=False`` evaluates the
    formula anyway.
    """
    pair = dist if isinstance(dist, LegendrePair) else LegendrePair.from_distribution(dist)
    if strict:
        _require_certified(pair, "the explicit rate")
    if constants is None:
        constants = green_constants(d)
    elif constants.d != d:
        raise ValueError("constants were computed for a different dimension")
    return gamma_inverse(pair, constants.chi_d)
