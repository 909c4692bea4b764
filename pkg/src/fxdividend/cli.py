"""Command-line front end.

    fxdividend [--config PATH|bsp1|bsp2] [--out DIR] [--seed N] [--format csv|svg]
               [--set table.key=value ...] {beta,solve,simulate,paths,sensitivity} ...

Exit codes: 0 success, 1 usage or configuration error, 2 ill-posed problem
(beta <= 0 or divergent), 3 verification alarm (z-score above the configured
threshold, oracle mismatch, or a failed monotonicity check).
"""
from __future__ import annotations

import argparse
import csv
import math
import sys
from pathlib import Path

import numpy as np

from . import svg
from .config import ConfigError, RunConfig, load, parse_grid
from .control import (
    Case,
    IllPosedError,
    Mode,
    ProblemSpec,
    RestrictedSolution,
    barriers_strictly_decreasing,
    hjb_residual,
    sensitivity_scan,
    solve,
)
from .levy import beta as levy_beta, is_well_posed
from .montecarlo import (
    ConstantRate,
    ReflectionBarrier,
    SimConfig,
    ThresholdRate,
    append_estimates_csv,
    export_discounted_fx_paths,
    simulate_value,
    write_paths_csv,
)
from .oracle import fd_policy_iteration_oracle

EXIT_OK, EXIT_USAGE, EXIT_ILL_POSED, EXIT_ALARM = 0, 1, 2, 3
ORACLE_TOL = 5e-4
VALUE_FUNCTION_HEADER = ["x", "F_or_G", "Fprime", "residual"]
SENSITIVITY_HEADER = ["beta", "x_r", "x_u"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; that code is reserved here
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _g(v: float) -> str:
    return f"{v:.12g}"


def _out_dir(cfg: RunConfig) -> Path:
    d = Path(cfg["output"]["dir"])
    d.mkdir(parents=True, exist_ok=True)
    return d


def _spec(cfg: RunConfig) -> ProblemSpec:
    p = cfg["problem"]
    return ProblemSpec.from_model(p["mu"], p["sigma"], p["delta"], cfg.triplet, p["xi"], Mode(p["mode"]))


# --------------------------------------------------------------------------


def cmd_beta(cfg: RunConfig, args, out) -> int:
    b = levy_beta(cfg.triplet, cfg["problem"]["delta"])
    ok = is_well_posed(b)
    print(f"beta: {b.value if not b.integrable else _g(b.value)}", file=out)
    print(f"integrable: {'yes' if b.integrable else 'no'}", file=out)
    print(f"well_posed: {'yes' if ok else 'no'}", file=out)
    if not ok:
        print("error: the problem is ill posed (beta must be finite and > 0)", file=sys.stderr)
        return EXIT_ILL_POSED
    return EXIT_OK


def cmd_solve(cfg: RunConfig, args, out) -> int:
    spec = _spec(cfg)
    sol = solve(spec)
    c = sol.constants
    restricted = isinstance(sol, RestrictedSolution)
    print(f"beta: {_g(spec.beta)}", file=out)
    print(f"theta: {_g(c.theta)}", file=out)
    print(f"zeta: {_g(c.zeta)}", file=out)
    if restricted:
        print(f"eta: {_g(c.eta)}", file=out)
        print(f"case: {sol.case.value}", file=out)
    print(f"barrier: {_g(sol.barrier)}", file=out)

    x_max = 3.0 * sol.barrier + 5.0
    xs = np.linspace(0.0, x_max, cfg["solve"]["grid_points"])
    v, v1, res = sol(xs), sol.derivative(xs, 1), hjb_residual(sol, xs)
    print(f"max_abs_residual: {_g(float(np.max(np.abs(res))))}", file=out)

    oracle = fd_policy_iteration_oracle(spec, x_max, cfg["solve"]["oracle_points"])
    gap = float(np.max(np.abs(oracle.values - sol(oracle.x))))
    h = oracle.x[1] - oracle.x[0]
    cells = abs(oracle.barrier - sol.barrier) / h
    ok = gap <= ORACLE_TOL and cells <= 2.0
    print(f"oracle_gap: {_g(gap)}", file=out)
    print(f"oracle_barrier: {_g(oracle.barrier)} ({cells:.2f} cells)", file=out)
    print(f"oracle_check: {'PASS' if ok else 'FAIL'}", file=out)

    d = _out_dir(cfg)
    with open(d / "value_function.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(VALUE_FUNCTION_HEADER)
        for row in zip(xs, v, v1, res):
            w.writerow([repr(float(a)) for a in row])
    if cfg["output"]["format"] == "svg":
        name = "F" if restricted else "G"
        svg.line_plot([(xs, v, name), (oracle.x, oracle.values, "oracle")],
                      d / "value_function.svg", f"Value function {name}", "x", name)
    return EXIT_OK if ok else EXIT_ALARM


def _sim_config(cfg: RunConfig) -> SimConfig:
    s = cfg["sim"]
    return SimConfig(dt=s["dt"], tail_tol=s["tail_tol"], n_paths=s["n_paths"], seed=s["seed"],
                     antithetic=s["antithetic"], bridge=s["bridge"], workers=s["workers"])


def _extra_strategy(args, spec: ProblemSpec, sol):
    if args.constant is not None:
        return ConstantRate(args.constant)
    if args.barrier is None and args.rate is None:
        return None
    b = sol.barrier if args.barrier is None else args.barrier
    if spec.mode is Mode.RESTRICTED or args.rate is not None:
        return ThresholdRate(b, spec.xi if args.rate is None else args.rate)
    return ReflectionBarrier(b)


def cmd_simulate(cfg: RunConfig, args, out) -> int:
    spec = _spec(cfg)
    sol = solve(spec)
    sim = _sim_config(cfg)
    x0, l0, alarm = cfg["sim"]["x0"], cfg["sim"]["l0"], cfg["sim"]["alarm_z"]
    if spec.mode is Mode.RESTRICTED:
        optimal = ThresholdRate(sol.barrier, spec.xi)
    else:
        optimal = ReflectionBarrier(sol.barrier)
    target = math.exp(-l0) * sol(x0)

    extra = _extra_strategy(args, spec, sol)
    runs = [optimal] + ([extra] if extra is not None else [])
    rows, status = [], EXIT_OK
    for strat in runs:
        est = simulate_value(spec, cfg.triplet, strat, sim, x0, l0)
        rows.append((strat, est, sim.seed))
        label = "optimal" if strat is optimal else "candidate"
        print(f"{label}: {strat}", file=out)
        print(f"  mean: {_g(est.mean)}  stderr: {_g(est.stderr)}  "
              f"truncation_bound: {_g(est.truncation_bound)}  horizon: {_g(est.horizon)}", file=out)
        if strat is optimal:
            # the truncation bound is a deterministic bias budget, removed before scaling
            excess = max(abs(est.mean - target) - est.truncation_bound, 0.0)
            z = math.copysign(excess, est.mean - target) / est.stderr if est.stderr > 0 else (
                0.0 if excess == 0.0 else math.inf)
            print(f"  analytic: {_g(target)}  z: {z:.3f}  alarm: {_g(alarm)}", file=out)
            if abs(z) > alarm:
                print(f"alarm: |z| = {abs(z):.3f} exceeds {_g(alarm)}", file=sys.stderr)
                status = EXIT_ALARM
        else:
            ok = est.mean <= target + 3.0 * est.stderr
            print(f"  dominated_by_optimum: {'PASS' if ok else 'FAIL'}", file=out)
    append_estimates_csv(_out_dir(cfg) / "estimates.csv", rows)
    return status


def cmd_paths(cfg: RunConfig, args, out) -> int:
    p = cfg["paths"]
    delta = cfg["problem"]["delta"]
    times, values = export_discounted_fx_paths(cfg.triplet, delta, p["T"], p["dt"], p["n"],
                                               cfg["sim"]["seed"])
    d = _out_dir(cfg)
    write_paths_csv(d / "paths.csv", times, values)
    slope = values[:, -1] / times[-1]
    print(f"paths: {values.shape[0]}  steps: {times.size - 1}  T: {_g(times[-1])}", file=out)
    print(f"mean_slope: {_g(float(slope.mean()))}  expected: {_g(cfg.triplet.mean() + delta)}", file=out)
    if cfg["output"]["format"] == "svg":
        svg.line_plot([(times, row) for row in values], d / "paths.svg",
                      "Sample paths of L_t + delta t", "t", "L_t + delta t")
    return EXIT_OK


def cmd_sensitivity(cfg: RunConfig, args, out) -> int:
    raw = args.grid if args.grid is not None else cfg["sensitivity"]["grid"]
    grid = parse_grid(raw, None if args.grid is not None else cfg)
    if any(y <= 0.0 for y in grid):
        raise ConfigError("beta grid values must be > 0", "--grid" if args.grid else cfg.source,
                          None, "sensitivity.grid")
    if len(set(grid)) != len(grid):
        raise ConfigError("beta grid contains duplicates", "--grid" if args.grid else cfg.source,
                          None, "sensitivity.grid")
    p = cfg["problem"]
    template = ProblemSpec(mu=p["mu"], sigma=p["sigma"], beta=1.0, xi=p["xi"])
    rows = sensitivity_scan(template, grid)
    with open(_out_dir(cfg) / "sensitivity.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(SENSITIVITY_HEADER)
        for r in rows:
            w.writerow([repr(r.beta), repr(r.x_r), repr(r.x_u)])
    pay_max = sum(r.case is Case.ALWAYS_PAY_MAX for r in rows)
    if pay_max:
        print(f"note: {pay_max} grid point(s) pay at the cap everywhere (x_r = 0)", file=out)
    ok = barriers_strictly_decreasing(rows)
    print(f"strictly_decreasing: {'PASS' if ok else 'FAIL'}", file=out)
    return EXIT_OK if ok else EXIT_ALARM


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS,
                        help="TOML config file or preset name (bsp1, bsp2)")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed")
    common.add_argument("--format", choices=("csv", "svg"), default=argparse.SUPPRESS,
                        help="svg also writes a plot next to the CSV")
    common.add_argument("--set", action="append", default=argparse.SUPPRESS, metavar="TABLE.KEY=VALUE",
                        help="override a config value (repeatable)")

    parser = _Parser(prog="fxdividend", parents=[common],
                     description="Optimal dividends with exchange-rate discounting.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)
    sub.add_parser("beta", parents=[common], help="artificial preference rate and well-posedness")
    sub.add_parser("solve", parents=[common], help="barriers, value function and oracle check")
    sp = sub.add_parser("simulate", parents=[common], help="Monte Carlo value of the optimal strategy")
    sp.add_argument("--barrier", type=float, help="additional strategy: barrier level")
    sp.add_argument("--rate", type=float, help="additional strategy: threshold payout rate")
    sp.add_argument("--constant", type=float, help="additional strategy: constant payout rate")
    sub.add_parser("paths", parents=[common], help="sample paths of L_t + delta t")
    ss = sub.add_parser("sensitivity", parents=[common], help="barriers over a grid of beta values")
    ss.add_argument("--grid", help="start:step:stop or comma list")
    return parser


COMMANDS = {
    "beta": cmd_beta,
    "solve": cmd_solve,
    "simulate": cmd_simulate,
    "paths": cmd_paths,
    "sensitivity": cmd_sensitivity,
}


def main(argv=None, out=None) -> int:
    out = sys.stdout if out is None else out
    try:
        args = build_parser().parse_args(argv)
        overrides = list(getattr(args, "set", []) or [])
        if hasattr(args, "seed"):
            overrides.append(f"sim.seed={args.seed}")
        if hasattr(args, "out"):
            overrides.append(f"output.dir={_toml_str(args.out)}")
        if hasattr(args, "format"):
            overrides.append(f"output.format={_toml_str(args.format)}")
        cfg = load(getattr(args, "config", None), tuple(overrides))
        return COMMANDS[args.command](cfg, args, out)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except IllPosedError as exc:
        print(f"ill-posed: {exc}", file=sys.stderr)
        return EXIT_ILL_POSED
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def _toml_str(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


if __name__ == "__main__":
    sys.exit(main())
