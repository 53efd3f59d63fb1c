"""Tail-probability experiments for the charged polymer."""
from .estimators import (TailEstimate, TiltPlan, RateCurveRow, naive_tail, naive_tail_curve,
                         pinning_plan, rate_curve, tilted_tail)
from .verify import verify_suite
from .enumeration import LATTICE_LAWS, MonotonicityReport, check_monotonicity, exact_tail, exact_x_law

__all__ = [
    "TailEstimate", "TiltPlan", "RateCurveRow", "naive_tail", "naive_tail_curve", "pinning_plan",
    "rate_curve", "tilted_tail", "LATTICE_LAWS", "MonotonicityReport", "check_monotonicity",
    "exact_tail", "exact_x_law", "verify_suite",
]
