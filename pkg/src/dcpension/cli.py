"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 invalid config, 3 verification
failure, 4 runtime or numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from .closedform import solution
from .model import InvalidParamsError, State, derive, load_params, validate
from .quadrature import QuadratureError

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_VERIFY, EXIT_NUMERIC = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _fmt(x) -> str:
    return "nan" if x is None else f"{float(x):.17g}"


def _dump(obj, out=None) -> None:
    text = json.dumps(obj, indent=2, default=float)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def parse_grid(text: str) -> np.ndarray:
    """``a:b:n`` is n equally spaced points including both ends."""
    try:
        a, b, n = text.split(":")
        a, b, n = float(a), float(b), int(n)
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like a:b:n, got {text!r}") from None
    if n < 1 or (n == 1 and a != b):
        raise argparse.ArgumentTypeError("grid needs n >= 2 points unless a == b")
    return np.linspace(a, b, n)


def _policy_spec(text: str):
    from .montecarlo import PolicySpec

    try:
        return PolicySpec.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="dcpension", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def cmd(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="model parameters (JSON)")
        p.add_argument("--manifest", help="write a run manifest (JSON) here")
        return p

    cmd("validate", "check a parameter file")
    p = cmd("coeffs", "print the derived varpi and a coefficients")
    p.add_argument("--out")

    p = cmd("value", "value function and its six components")
    for name in ("t", "x", "l", "v"):
        p.add_argument(f"--{name}", type=float, required=True)
    p.add_argument("--out")

    p = cmd("policy", "optimal weight and amount over a wealth grid")
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--grid-x", type=parse_grid, required=True, metavar="A:B:N")
    p.add_argument("--l", type=float, required=True)
    p.add_argument("--v", type=float, required=True)
    p.add_argument("--out", help="CSV path (stdout if omitted)")

    p = cmd("simulate", "Monte Carlo estimate of the objective")
    p.add_argument("--paths", type=int, default=100_000)
    p.add_argument("--steps-per-year", type=int, default=252)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--policy", type=_policy_spec, default="optimal",
                   help="optimal | constant:<w> | perturbed:<d>")
    p.add_argument("--mode", choices=("written", "exact"), default="written")
    p.add_argument("--out", help="per-path CSV")
    p.add_argument("--summary", help="write the estimate JSON here as well as to stdout")

    p = cmd("verify", "residual checks against independent oracles")
    p.add_argument("check", choices=("all", "ode", "hjb", "foc", "ansatz", "mc"))
    p.add_argument("--tol", type=float, help="override the check tolerance (not used by mc)")
    p.add_argument("--paths", type=int, default=100_000, help="paths for the Monte Carlo check")
    p.add_argument("--probe-paths", type=int, default=10_000, help="paths per offset of the convexity probe (0 skips)")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", help="JSON report path (stdout if omitted)")
    return ap


# --------------------------------------------------------------------------- subcommands


def _coeffs(args, params):
    c = derive(params)
    _dump({"varpi": [c.varpi1, c.varpi2, c.varpi3, c.varpi4], "a": [c.a1, c.a2, c.a3, c.a4, c.a5]}, args.out)
    return EXIT_OK, [args.out]


def _value(args, params):
    cf = solution(params)
    if not 0 <= args.t <= params.T:
        raise UsageError(f"--t must lie in [0, T={params.T}]")
    if args.v < 0:
        raise UsageError("--v must be >= 0")
    comps = cf.components(args.t, args.v)
    value = (comps["phi1"] * args.x**2 + comps["phi2"] * args.x + comps["phi3"] * args.l**2
             + comps["phi4"] * args.l + comps["phi5"] * args.x * args.l + comps["phi6"])
    _dump({"state": {"t": args.t, "x_bar": args.x, "l_bar": args.l, "v": args.v},
           "value": value, "components": comps}, args.out)
    return EXIT_OK, [args.out]


def _policy(args, params):
    if not 0 <= args.t <= params.T:
        raise UsageError(f"--t must lie in [0, T={params.T}]")
    cf = solution(params)
    rows = []
    for x in args.grid_x:
        pol = cf.policy(State(args.t, float(x), args.l, args.v))
        rows.append((_fmt(x), _fmt(pol.weight), _fmt(pol.amount)))
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x_bar", "pi_star", "amount"])
        w.writerows(rows)
    finally:
        if args.out:
            fh.close()
    return EXIT_OK, [args.out]


def _simulate(args, params):
    from .montecarlo import SimConfig, simulate

    try:
        config = SimConfig(args.paths, args.steps_per_year, args.seed, args.policy, args.mode)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    result = simulate(config, params)
    if args.out:
        result.write_csv(args.out)
    summary = {"policy": str(args.policy), "mode": args.mode, "seed": args.seed,
               "steps_per_year": args.steps_per_year, **result.estimate().to_dict()}
    _dump(summary)
    if args.summary:
        _dump(summary, args.summary)
    return EXIT_OK, [args.out, args.summary]


def _verify(args, params):
    from .verify import reports_json, run_checks

    reports = run_checks(params, args.check, mc_paths=args.paths, tol=args.tol,
                         probe_paths=args.probe_paths or None, seed=args.seed)
    text = reports_json(reports)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    for r in reports:
        print(r.summary(), file=sys.stderr)
    return (EXIT_OK if all(r.passed for r in reports) else EXIT_VERIFY), [args.out]


COMMANDS = {"coeffs": _coeffs, "value": _value, "policy": _policy, "simulate": _simulate, "verify": _verify}


def run_cli(argv=None) -> int:
    start = time.perf_counter()
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE

    try:
        params = validate(load_params(args.config))
    except InvalidParamsError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, json.JSONDecodeError, TypeError) as exc:
        print(f"cannot read config {args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    outputs = []
    try:
        if args.command == "validate":
            print("ok")
            code = EXIT_OK
        else:
            code, outputs = COMMANDS[args.command](args, params)
    except UsageError as exc:
        print(f"dcpension {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (QuadratureError, FloatingPointError, ArithmeticError, RuntimeError, ValueError) as exc:
        print(f"dcpension {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC

    if args.manifest:
        _dump({"subcommand": args.command, "config": str(args.config), "parameters": params.to_dict(),
               "seed": getattr(args, "seed", None), "outputs": [o for o in outputs if o],
               "wall_clock_seconds": time.perf_counter() - start}, args.manifest)
    return code


def main() -> None:
    sys.exit(run_cli())
