"""The invariant suite behind ``charged-polymer verify``."""
from __future__ import annotations

import math

import numpy as np

from .._rng import child_seed
from ..charge_models import example_family, gaussian, rademacher
from ..rate_function import LegendrePair, check_duality_identity
from .bounds import (check_concentration, check_nagaev, check_return_tail, check_zeta_regimes,
                     plus_shape)
from .enumeration import check_monotonicity, exact_tail
from .estimators import naive_tail, tilted_tail


def _record(check: str, passed: bool, hard: bool = True, **detail) -> dict:
    return {"record": "verify", "check": check, "passed": bool(passed), "hard": hard, **detail}


def _agrees(est, exact, k: float = 3.0) -> bool:
    return abs(est.probability - exact.probability) <= k * est.stderr


def verify_suite(seed: int, quick: bool = False, workers: int = 1) -> list[dict]:
    """Run every check at desk scale; ``quick`` shrinks the sample budgets.

    Records flagged ``hard`` decide the exit status. The +-1 monotonicity
    table is report-only: parity makes it fail at unit steps (see README).
    """
    scale = 5 if quick else 1
    s = iter(range(100))
    out = []

    for n, xi in ((2, 2), (4, 2), (6, 4)):
        ex = exact_tail(3, n, xi)
        nv = naive_tail(3, n, xi, samples=10**6 // scale, seed=child_seed(seed, next(s)), workers=workers)
        tt = tilted_tail(3, n, xi, samples=10**6 // scale, seed=child_seed(seed, next(s)), workers=workers)
        out.append(_record(f"oracle_agreement[n={n},xi={xi}]", _agrees(nv, ex) and _agrees(tt, ex)
                           and tt.ess >= 100, exact=ex.probability, naive=nv.probability,
                           tilted=tt.probability, tilted_ess=tt.ess))

    for name, pair, grid, tol in (
        ("gaussian", LegendrePair.from_distribution(gaussian()), np.linspace(0.1, 5, 50), 1e-6),
        ("rademacher", LegendrePair.from_distribution(rademacher()), np.linspace(0.05, 0.95, 50), 1e-6),
        ("example_family", LegendrePair.from_distribution(example_family()), np.linspace(0.1, 3, 12), 1e-4),
    ):
        res = check_duality_identity(pair, grid)
        out.append(_record(f"duality_identity[{name}]", res <= tol, residual=res, tolerance=tol))

    for law, hard in (("three_point", True), ("rademacher", False)):
        rep = check_monotonicity(law=law)
        out.append(_record(f"monotonicity[{law}]", rep.passed, hard=hard, comparisons=rep.comparisons,
                           violations=len(rep.violations)))

    samples = 40_000 // scale
    rep = check_concentration(3, plus_shape(3), 1000, np.arange(0, 30, 2), samples,
                              child_seed(seed, next(s)), workers=workers)
    out.append(_record("concentration[plus]", rep.passed, **rep.fitted))

    for dist, n, grid in ((gaussian(), 200, np.linspace(0, 20, 21)),
                          (rademacher(), 20, np.linspace(0, 30, 31))):
        rep = check_zeta_regimes(dist, n, grid, 200_000 // scale, child_seed(seed, next(s)), workers=workers)
        out.append(_record(f"zeta_regimes[{dist.name}]", rep.passed, **rep.fitted))

    rep = check_nagaev(gaussian(), 1000, np.array([0, 50, 100, 150, 200, 250.0]), 20_000 // scale,
                       child_seed(seed, next(s)), workers=workers)
    out.append(_record("nagaev[gaussian]", rep.passed, **rep.fitted))

    rep = check_return_tail(3, 200_000 // scale, 10_000, child_seed(seed, next(s)), workers=workers)
    out.append(_record("return_tail[d=3]", rep.passed, exponent=rep.fitted["exponent"]))
    for r in out:
        for k, v in list(r.items()):
            if isinstance(v, float) and not math.isfinite(v):
                r[k] = str(v)
    return out
