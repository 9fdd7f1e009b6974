"""Command-line entry points.

Exit codes: 0 success, 2 configuration error, 3 run error.
"""

from __future__ import annotations

import argparse
import json
import sys

from .core import InvalidInstanceError, load_instance, save_instance
from .harness import (ConfigError, ExperimentError, ExponentUnresolved,
                      estimate_error_exponent, exponent_to_csv,
                      generate_eoo_instance, generate_random_instance,
                      load_config, load_dataset_instance, records_from_csv,
                      run_experiment)
from .hardness import ConvergenceError, SolverOptions, gamma_closed_form

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUN = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blfai",
        description="Fixed-budget best feasible arm identification: "
                    "simulations, hardness solver, and instance tooling.")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a configured experiment sweep")
    sim.add_argument("--config", required=True, help="TOML experiment file")

    hard = sub.add_parser("hardness", help="solve the error exponent")
    hard.add_argument("instance", help="instance JSON file")
    hard.add_argument("--restarts", type=int, default=20)
    hard.add_argument("--seed", type=int, default=0)

    gen = sub.add_parser("gen-instance", help="write an instance JSON file")
    gen_sub = gen.add_subparsers(dest="source", required=True)
    gen_eoo = gen_sub.add_parser("eoo")
    gen_eoo.add_argument("--alpha", type=float, required=True)
    gen_eoo.add_argument("-o", "--output", required=True)
    gen_rand = gen_sub.add_parser("random")
    gen_rand.add_argument("--d", type=int, required=True)
    gen_rand.add_argument("--k", type=int, required=True)
    gen_rand.add_argument("--seed", type=int, required=True)
    gen_rand.add_argument("-o", "--output", required=True)
    gen_ds = gen_sub.add_parser("dataset")
    gen_ds.add_argument("--csv", required=True)
    gen_ds.add_argument("--tau", type=float, required=True)
    gen_ds.add_argument("--sidecar", default=None)
    gen_ds.add_argument("-o", "--output", required=True)

    exp = sub.add_parser("exponent", help="fit the error exponent from records")
    exp.add_argument("--records", required=True, help="results CSV")
    exp.add_argument("--budgets", required=True,
                     help="comma-separated budget list")
    exp.add_argument("-o", "--output", default=None,
                     help="write per-budget exponent CSV here")
    return parser


def _cmd_simulate(args) -> int:
    try:
        cfg = load_config(args.config)
    except (ConfigError, InvalidInstanceError, FileNotFoundError, KeyError,
            ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        _, summary = run_experiment(cfg)
    except ExperimentError as exc:
        print(f"run error: {exc}", file=sys.stderr)
        return EXIT_RUN
    print(json.dumps({k: summary[k] for k in
                      ("instance", "algorithms", "budgets", "repetitions",
                       "total_pulls", "wall_clock_s")}))
    return EXIT_OK


def _cmd_hardness(args) -> int:
    try:
        inst = load_instance(args.instance)
    except (InvalidInstanceError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        result = gamma_closed_form(inst, SolverOptions(restarts=args.restarts,
                                                       seed=args.seed))
    except (ConvergenceError, ValueError) as exc:
        print(f"run error: {exc}", file=sys.stderr)
        return EXIT_RUN
    print(json.dumps({
        "gamma": result.gamma,
        "w_star": [float(w) for w in result.w_star],
        "binding_arm": result.binding_arm,
        "case": result.binding_case,
    }))
    return EXIT_OK


def _cmd_gen_instance(args) -> int:
    try:
        if args.source == "eoo":
            inst = generate_eoo_instance(args.alpha)
        elif args.source == "random":
            inst = generate_random_instance(args.d, args.k, args.seed)
        else:
            inst = load_dataset_instance(args.csv, args.tau,
                                         sidecar=args.sidecar)
            if not inst.truth_known:
                print("config error: cannot serialize an instance without "
                      "ground truth; provide a sidecar", file=sys.stderr)
                return EXIT_CONFIG
        save_instance(inst, args.output)
    except (InvalidInstanceError, ConfigError, ValueError,
            FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(args.output)
    return EXIT_OK


def _cmd_exponent(args) -> int:
    try:
        budgets = [int(b) for b in args.budgets.split(",") if b.strip()]
        records = records_from_csv(args.records)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        fit = estimate_error_exponent(records, budgets)
    except ExponentUnresolved as exc:
        print(f"run error: {exc}", file=sys.stderr)
        return EXIT_RUN
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.output:
        with open(args.output, "w", encoding="utf-8", newline="") as fh:
            fh.write(exponent_to_csv(fit))
    print(json.dumps({"slope": fit.slope, "r_squared": fit.r_squared,
                      "budgets": list(fit.budgets),
                      "p_err": list(fit.p_err), "floor": fit.floor}))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "simulate": _cmd_simulate,
        "hardness": _cmd_hardness,
        "gen-instance": _cmd_gen_instance,
        "exponent": _cmd_exponent,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
