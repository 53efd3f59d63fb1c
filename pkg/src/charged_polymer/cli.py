"""Command-line front end.

Every command writes JSON lines (default) or CSV, to stdout or to ``--out``.
Relative ``--out`` paths are placed under ``$CHARGED_POLYMER_OUTPUT_DIR``
when that variable is set; no other environment variable is read.

Exit codes: 0 success, 1 invalid configuration, 2 runtime failure
(non-convergence, weight overflow, failed verification), 3 convexity
hypothesis not certified.

Config files are flat ``key = value`` lines; ``#`` starts a comment and
keys are the long flag names with ``-`` or ``_``. Flags on the command
line override the file.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import charge_models
from ._rng import check_seed, child_seed
from .errors import HypothesisNotCertified, InstanceTooLarge, NonConvergenceError, WeightOverflow
from .lattice_walk import WalkConfig, green_constants, return_probability_mc, simulate_walk
from .lattice_walk import truncation_allowance
from .polymer_energy import build_sample, energy
from .rate_function import LegendrePair, check_duality_identity, rate_constant
from .tail_lab import (TiltPlan, exact_tail, naive_tail, rate_curve,
                       tilted_tail)

SCHEMA_VERSION = 1
OUTPUT_DIR_ENV = "CHARGED_POLYMER_OUTPUT_DIR"

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_NOT_CERTIFIED = 0, 1, 2, 3


class ConfigError(Exception):
    """Invalid command line or config file."""


class _Parser(argparse.ArgumentParser):
    def __init__(self, *args, **kwargs):
        kwargs.setdefault("allow_abbrev", False)
        super().__init__(*args, **kwargs)

    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


# --------------------------------------------------------------------------
# parsing helpers
# --------------------------------------------------------------------------

def parse_dist(text: str) -> charge_models.ChargeDistribution:
    """``name`` or ``name:key=value,key=value``, e.g. ``gaussian:sigma=2``."""
    name, _, rest = text.partition(":")
    params = {}
    for item in filter(None, (p.strip() for p in rest.split(","))):
        key, eq, value = item.partition("=")
        if not eq:
            raise ConfigError(f"distribution parameter {item!r} is not key=value")
        if value.lower() in ("true", "false"):
            params[key.strip()] = value.lower() == "true"
        else:
            try:
                params[key.strip()] = float(value)
            except ValueError:
                raise ConfigError(f"distribution parameter {key!r} must be numeric") from None
    try:
        return charge_models.from_spec({"name": name.strip(), "params": params})
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def read_config(path: str) -> dict[str, str]:
    """Flat ``key = value`` file; blank lines and ``#`` comments are skipped."""
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    for no, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        if not eq or not key.strip():
            raise ConfigError(f"{path}:{no}: expected key = value")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _int_list(text: str) -> list[int]:
    try:
        return [int(float(v)) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _add_common(p: argparse.ArgumentParser, stochastic: bool) -> None:
    p.add_argument("--config", help="flat key = value file; flags override it")
    p.add_argument("--out", help="output file (default stdout)")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    if stochastic:
        p.add_argument("--seed", type=int, help="master seed (required)")
        p.add_argument("--workers", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="charged-polymer", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("constants", help="Green function, return probability and chi_d")
    _add_common(p, stochastic=True)
    p.add_argument("-d", "--dimension", type=int, default=3)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--method", choices=("bessel", "torus"), default="bessel")
    p.add_argument("--mc-check", action="store_true", help="add a Monte Carlo return frequency")
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--horizon", type=int, default=10_000)

    p = sub.add_parser("rate", help="rate constant, rate-function table and certification")
    _add_common(p, stochastic=False)
    p.add_argument("--dist", default="gaussian")
    p.add_argument("-d", "--dimension", type=int, default=3)
    p.add_argument("--grid", type=_float_list, default=[0.25, 0.5, 1.0, 1.5, 2.0])
    p.add_argument("--identity-check", action="store_true")
    p.add_argument("--no-strict", action="store_true", help="evaluate even when not certified")

    p = sub.add_parser("simulate", help="sample polymers and report their energies")
    _add_common(p, stochastic=True)
    p.add_argument("--dist", default="rademacher")
    p.add_argument("-d", "--dimension", type=int, default=3)
    p.add_argument("-n", type=int, required=False, default=None)
    p.add_argument("--samples", type=int, default=10)

    p = sub.add_parser("tails", help="estimate P(X_n >= xi)")
    _add_common(p, stochastic=True)
    p.add_argument("--method", choices=("exact", "naive", "tilted", "curve"), default="exact")
    p.add_argument("--dist", default="rademacher")
    p.add_argument("-d", "--dimension", type=int, default=3)
    p.add_argument("-n", type=int, default=None)
    p.add_argument("--n-list", type=_int_list, default=None)
    p.add_argument("--xi", type=float, default=None)
    p.add_argument("--xi-power", type=float, default=None)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--theta", type=float, default=None)
    p.add_argument("--target", choices=("revisited", "most_visited", "origin"), default="revisited")

    p = sub.add_parser("verify", help="run the invariant suite")
    _add_common(p, stochastic=True)
    p.add_argument("--quick", action="store_true")
    parser.commands = dict(sub.choices)
    return parser


def parse_args(argv) -> argparse.Namespace:
    """Parse ``argv``; a ``--config`` file supplies defaults that flags override."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.config:
        return args
    sub = parser.commands[args.command]
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
    defaults = {}
    for key, raw in read_config(args.config).items():
        if key not in actions:
            raise ConfigError(f"unknown config key {key!r} for {args.command}")
        defaults[key] = _coerce(actions[key], key, raw)
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _coerce(action: argparse.Action, key: str, raw: str):
    if isinstance(action, argparse._StoreTrueAction):
        if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ConfigError(f"config key {key!r} expects a boolean")
        return raw.lower() in ("true", "1", "yes")
    try:
        value = action.type(raw) if action.type else raw
    except (ValueError, argparse.ArgumentTypeError) as exc:
        raise ConfigError(f"config key {key!r}: {exc}") from None
    if action.choices and value not in action.choices:
        raise ConfigError(f"config key {key!r} must be one of {list(action.choices)}")
    return value


# --------------------------------------------------------------------------
# output
# --------------------------------------------------------------------------

def _clean(v):
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    return v


def render(records: list[dict], fmt: str) -> str:
    records = [{"schema_version": SCHEMA_VERSION, **{k: _clean(v) for k, v in r.items()}} for r in records]
    if fmt == "json":
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)
    buf = io.StringIO()
    fields: list[str] = []
    for r in records:
        fields += [k for k in r if k not in fields]
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for r in records:
        writer.writerow(r)
    return buf.getvalue()


def _write(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    path = Path(out)
    base = os.environ.get(OUTPUT_DIR_ENV)
    if base and not path.is_absolute():
        path = Path(base) / path
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _seed(args) -> int:
    if args.seed is None:
        raise ConfigError("--seed is required for stochastic commands")
    try:
        return check_seed(args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _validate_dimension(d: int) -> int:
    if d < 3:
        raise ConfigError(f"dimension must satisfy d >= 3 (got {d}); the walk must be transient")
    return d


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_constants(args) -> list[dict]:
    d = _validate_dimension(args.dimension)
    c = green_constants(d, tol=args.tol, method=args.method)
    rec = {"record": "lattice_constants", **c.as_dict()}
    if args.mc_check:
        est = return_probability_mc(d, args.horizon, args.samples, _seed(args), workers=args.workers)
        allowance = truncation_allowance(d, args.horizon)
        gap = c.return_probability - est.estimate
        rec.update(mc_return_frequency=est.estimate, mc_stderr=est.stderr, mc_samples=est.samples,
                   mc_horizon=est.horizon, mc_truncation_allowance=allowance,
                   mc_agrees=bool(-3 * est.stderr <= gap <= 3 * est.stderr + allowance))
    return [rec]


def cmd_rate(args) -> list[dict]:
    d = _validate_dimension(args.dimension)
    dist = parse_dist(args.dist)
    pair = LegendrePair.from_distribution(dist)
    cert = pair.certificate
    constants = green_constants(d)
    value = rate_constant(pair, d, strict=not args.no_strict, constants=constants)
    rec = {"record": "rate", "dist": dist.name, "d": d, "chi_d": constants.chi_d, "rate_constant": value,
           "gamma_sqrt_convex": cert.gamma_sqrt_convex, "rate_sqrt_concave": cert.rate_sqrt_concave,
           "certified": cert.certified}
    grid = np.asarray(args.grid, dtype=float)
    if math.isfinite(pair.slope_bound):
        grid = grid[np.abs(grid) < pair.slope_bound]
    if args.identity_check and grid.size:
        rec["identity_residual"] = check_duality_identity(pair, grid)
    rows = [{"record": "rate_table", "x": float(x), "rate": float(pair.rate(x))} for x in args.grid]
    return [rec] + rows


def cmd_simulate(args) -> list[dict]:
    d = _validate_dimension(args.dimension)
    if args.n is None or args.n < 1:
        raise ConfigError("simulate needs -n >= 1")
    dist = parse_dist(args.dist)
    seed = _seed(args)
    out = []
    for i in range(args.samples):
        traj = simulate_walk(WalkConfig(d, args.n, child_seed(seed, i, 0)))
        sample = build_sample(traj, dist, child_seed(seed, i, 1))
        e = energy(sample)
        out.append({"record": "polymer_sample", "index": i, "d": d, "n": args.n, "dist": dist.name,
                    "H": e.H, "X_check": e.X_check, "Y": e.Y, "sites": len(sample.local_times),
                    "max_local_time": int(sample.local_times.counts.max())})
    return out


def _xi_of(args, n: int) -> float:
    if args.xi is not None and args.xi_power is not None:
        raise ConfigError("give either --xi or --xi-power, not both")
    if args.xi is not None:
        return args.xi
    if args.xi_power is not None:
        return float(n) ** args.xi_power
    raise ConfigError("tails needs --xi or --xi-power")


def cmd_tails(args) -> list[dict]:
    d = _validate_dimension(args.dimension)
    dist = parse_dist(args.dist)
    if args.method == "curve":
        if not args.n_list or args.xi_power is None:
            raise ConfigError("--method curve needs --n-list and --xi-power")
        rows = rate_curve(d, dist, args.n_list, args.xi_power, samples=args.samples, seed=_seed(args),
                          workers=args.workers)
        return [{"record": "rate_curve", "d": d, "dist": dist.name, **r.as_dict()} for r in rows]
    if args.n is None or args.n < 1:
        raise ConfigError("tails needs -n >= 1")
    xi = _xi_of(args, args.n)
    if args.method == "exact":
        if not isinstance(dist, charge_models.Rademacher):
            raise ConfigError("exact enumeration supports only the rademacher law")
        est = exact_tail(d, args.n, xi)
    elif args.method == "naive":
        est = naive_tail(d, args.n, xi, dist, samples=args.samples, seed=_seed(args), workers=args.workers)
    else:
        plan = TiltPlan(target=args.target, theta=args.theta)
        est = tilted_tail(d, args.n, xi, dist, plan, samples=args.samples, seed=_seed(args),
                          workers=args.workers)
    return [{"record": "tail_estimate", **est.as_dict()}]


def cmd_verify(args) -> list[dict]:
    from .tail_lab import verify_suite

    records = verify_suite(_seed(args), quick=args.quick, workers=args.workers)
    return records


COMMANDS = {"constants": cmd_constants, "rate": cmd_rate, "simulate": cmd_simulate,
            "tails": cmd_tails, "verify": cmd_verify}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
        records = COMMANDS[args.command](args)
        _write(render(records, args.format), args.out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except HypothesisNotCertified as exc:
        print(f"error: hypothesis not certified: {exc}", file=sys.stderr)
        return EXIT_NOT_CERTIFIED
    except (NonConvergenceError, WeightOverflow, FloatingPointError, OverflowError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (InstanceTooLarge, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "verify" and not all(r.get("passed", True) for r in records if r.get("hard")):
        return EXIT_RUNTIME
    return EXIT_OK
