"""Command-line interface: run scenarios, sweep parameters, evaluate formulas.

    ecosim run --scenario paper_default --seed 7 --out out/
    ecosim sweep --scenario paper_default --param perception.accuracy \
        --values 0.5,0.512,0.55,0.6 --seeds 10 --out sweeps/
    ecosim calc breakeven --c-ratio 0.1 --r 1
    ecosim calc ev --w 0.512 --r 1 --risk 0.01 --c 0.001

Scenario arguments accept either a path to a JSON file or the name of a
bundled scenario.  The default output directory comes from the ECOSIM_OUT
environment variable (falling back to ./ecosim-out).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from importlib import resources

import numpy as np
from scipy import stats as sstats

from ecosim.analytics import breakeven_win_rate, expected_value, _atomic_write
from ecosim.engine import load_scenario, run, scenario_from_dict, scenario_to_dict

BUNDLED = ("paper_default", "frictionless_null", "cascade_correlated",
           "cascade_independent", "no_bailout_control", "above_breakeven",
           "stagnation_starvation")


def bundled_scenario_path(name: str) -> str:
    ref = resources.files("ecosim").joinpath(f"scenarios/{name}.json")
    return str(ref)


def resolve_scenario(arg: str) -> str:
    if os.path.exists(arg):
        return arg
    if arg in BUNDLED:
        return bundled_scenario_path(arg)
    raise FileNotFoundError(
        f"scenario {arg!r} is neither a file nor a bundled scenario "
        f"(bundled: {', '.join(BUNDLED)})"
    )


def default_out_dir() -> str:
    return os.environ.get("ECOSIM_OUT", "ecosim-out")


def _print_summary(summary: dict) -> None:
    churn = summary["churn_ratio"]
    conv = summary["convergence_mean"]
    print(f"scenario          : {summary['scenario']} (seed {summary['seed']})")
    print(f"steps             : {summary['steps']}")
    print(f"initial capital   : {summary['initial_capital']:.2f}")
    print(f"final total equity: {summary['final_total_equity']:.2f}")
    print(f"final AUM         : {summary['final_aum']:.2f}")
    print(f"final ROI         : {summary['final_roi']:+.4%}")
    print(f"group cash        : {summary['final_group_cash']:.2f}")
    print(f"injections        : {summary['cumulative_injections']:.2f}")
    print(f"fees paid         : {summary['cumulative_fees']:.2f}")
    print(f"trades            : {summary['trades_total']}")
    print(f"achieved accuracy : {summary['achieved_accuracy']:.4f}"
          f"  (scenario breakeven W_BE {summary['scenario_breakeven_win_rate']:.4f})")
    print(f"churn ratio       : {churn if churn is not None else 'undefined'}")
    print(f"starvation        : {summary['starvation_fraction']:.4f}")
    print(f"convergence mean  : {conv if conv is not None else 'undefined'}")
    print(f"cascade events    : {len(summary['cascade_events'])}")


def cmd_run(args) -> int:
    try:
        config = load_scenario(resolve_scenario(args.scenario))
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        config.seed = args.seed
    out_dir = args.out or os.path.join(default_out_dir(), f"{config.name}-seed{config.seed}")
    try:
        report = run(config)
    except (ValueError, AssertionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    report.write(out_dir)
    _print_summary(report.summary_dict())
    print(f"artifacts         : {out_dir}")
    return 0


def _set_dotted(doc: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = doc
    for p in parts[:-1]:
        if p not in node or not isinstance(node[p], dict):
            raise KeyError(dotted)
        node = node[p]
    if parts[-1] not in node:
        raise KeyError(dotted)
    node[parts[-1]] = value


def _known_params(doc: dict, prefix: str = "") -> list[str]:
    names = []
    for k, v in doc.items():
        if isinstance(v, dict):
            names.extend(_known_params(v, f"{prefix}{k}."))
        else:
            names.append(f"{prefix}{k}")
    return names


def cmd_sweep(args) -> int:
    try:
        config = load_scenario(resolve_scenario(args.scenario))
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    values = [v for v in args.values.split(",") if v != ""]
    if not values:
        print("error: --values must list at least one value", file=sys.stderr)
        return 2
    if args.seeds < 1:
        print("error: --seeds must be >= 1", file=sys.stderr)
        return 2

    base_doc = scenario_to_dict(config)
    out_dir = args.out or os.path.join(default_out_dir(), f"sweep-{config.name}-{args.param.replace('.', '_')}")
    os.makedirs(out_dir, exist_ok=True)

    run_rows = []
    agg_rows = []
    for raw in values:
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        doc = json.loads(json.dumps(base_doc))
        try:
            _set_dotted(doc, args.param, value)
        except KeyError:
            print(f"error: unknown parameter {args.param!r}; valid names:", file=sys.stderr)
            for name in _known_params(base_doc):
                print(f"  {name}", file=sys.stderr)
            return 2
        finals = []
        for k in range(args.seeds):
            point = scenario_from_dict(doc)
            point.seed = config.seed + k
            try:
                point.validate()
                report = run(point)
            except (ValueError, AssertionError) as exc:
                print(f"error: {exc}", file=sys.stderr)
                return 1
            finals.append(report.final_total_equity)
            run_rows.append((args.param, raw, point.seed, report.final_total_equity,
                             report.final_roi, report.fees_total, report.trades_total))
        arr = np.asarray(finals)
        mean = float(arr.mean())
        if len(arr) > 1 and arr.std(ddof=1) > 0:
            half = float(sstats.t.ppf(0.975, len(arr) - 1) * arr.std(ddof=1) / math.sqrt(len(arr)))
        else:
            half = 0.0
        agg_rows.append((args.param, raw, len(arr), mean, mean - half, mean + half))

    runs_path = os.path.join(out_dir, "runs.csv")
    lines = ["param,value,seed,final_total_equity,final_roi,fees,trades"]
    lines += [",".join(str(x) for x in r) for r in run_rows]
    _atomic_write(runs_path, "\n".join(lines) + "\n")

    agg_path = os.path.join(out_dir, "summary.csv")
    lines = ["param,value,n_seeds,mean_final_equity,ci95_low,ci95_high"]
    lines += [",".join(str(x) for x in r) for r in agg_rows]
    _atomic_write(agg_path, "\n".join(lines) + "\n")
    print(f"sweep results: {runs_path} ({len(run_rows)} runs), {agg_path}")
    return 0


def cmd_calc(args) -> int:
    try:
        if args.formula == "breakeven":
            print(repr(breakeven_win_rate(args.c_ratio, args.r)))
        else:
            print(repr(expected_value(args.w, args.r, args.risk, args.c)))
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ecosim",
                                     description="evolutionary trading-ecosystem simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario and write report artifacts")
    p_run.add_argument("--scenario", required=True, help="scenario file or bundled name")
    p_run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p_run.add_argument("--out", default=None, help="output directory")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a scenario across parameter values and seeds")
    p_sweep.add_argument("--scenario", required=True)
    p_sweep.add_argument("--param", required=True, help="dotted scenario field, e.g. friction.taker_fee")
    p_sweep.add_argument("--values", required=True, help="comma-separated values")
    p_sweep.add_argument("--seeds", type=int, default=5, help="seeds per value (base seed increments)")
    p_sweep.add_argument("--out", default=None)
    p_sweep.set_defaults(func=cmd_sweep)

    p_calc = sub.add_parser("calc", help="evaluate the per-trade expectation formulas")
    calc_sub = p_calc.add_subparsers(dest="formula", required=True)
    p_ev = calc_sub.add_parser("ev", help="expected value per trade")
    p_ev.add_argument("--w", type=float, required=True, help="win rate")
    p_ev.add_argument("--r", type=float, required=True, help="reward-to-risk ratio")
    p_ev.add_argument("--risk", type=float, required=True, help="fractional loss per losing trade")
    p_ev.add_argument("--c", type=float, required=True, help="round-trip cost fraction")
    p_ev.set_defaults(func=cmd_calc)
    p_be = calc_sub.add_parser("breakeven", help="breakeven win rate")
    p_be.add_argument("--c-ratio", dest="c_ratio", type=float, required=True)
    p_be.add_argument("--r", type=float, required=True)
    p_be.set_defaults(func=cmd_calc)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
