#!/usr/bin/env python3

import os
import sys
import json
import logging
import argparse
import configparser

from log import LEVELS, setup_logging
from dpcore import fixtures, tester
from dpcore.accountant import BudgetLedger
from dpcore.exceptions import (
    BudgetExceededError,
    DuplicateQueryError,
    LedgerClosedError,
    PrivacyError,
    UnstableBoundsError,
)
from dpcore.feasibility import (
    EconomicModel,
    expected_cost_from_breach_stats,
    is_feasible,
    max_feasible_epsilon,
)
from dpcore.mechanisms import PrivacyParams, RandomSource
from dpcore.sensitivity import ClippingBounds, dp_upper_bound_search
from ecg_release.dataset import ingest_csv, synthesize, write_csv
from ecg_release.exceptions import ReleaseError
from ecg_release.plan import load_plan
from ecg_release.release import execute
from ecg_release.report import emit_report

APP_NAME = "ecg-dp-release"

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_REFUSED = 2
EXIT_IO = 3

config = configparser.ConfigParser()
logger = logging.getLogger()

config_path = os.getenv("ECGDP_CONFIG", "config.ini")


class CliParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def exit_code(error: Exception) -> int:
    match error:
        case BudgetExceededError() | LedgerClosedError() | DuplicateQueryError():
            return EXIT_REFUSED
        case UnstableBoundsError():
            return EXIT_REFUSED
        case OSError():
            return EXIT_IO
        case _:
            return EXIT_VALIDATION


def open_ledger(path: str, total: PrivacyParams | None) -> BudgetLedger:
    if os.path.exists(path):
        return BudgetLedger.load(path)
    if total is None:
        raise ReleaseError(f"ledger {path} does not exist; pass --ledger-epsilon")
    return BudgetLedger.open_or_create(path, total)


def cmd_ingest(args) -> int:
    dataset = ingest_csv(args.data, strict=not args.lenient)

    print(f"rows: {len(dataset)}")
    for name, count in dataset.diagnostics.items():
        print(f"dropped ({name}): {count}")

    if args.out and not args.validate:
        write_csv(dataset, args.out)
        print(f"written: {args.out}")

    return EXIT_OK


def cmd_feasibility(args) -> int:
    expected_cost = args.expected_cost
    if expected_cost is None:
        if None in (args.annual_affected, args.breach_population, args.breach_cost):
            logger.error("Pass --expected-cost or all three breach statistics")
            return EXIT_VALIDATION
        expected_cost = expected_cost_from_breach_stats(
            args.annual_affected, args.breach_population, args.breach_cost
        )
        print(f"expected_cost = {expected_cost:.6g}")

    model = EconomicModel(args.budget, expected_cost, args.population)
    print(f"epsilon_max = {max_feasible_epsilon(model):.6g}")

    if args.epsilon is not None:
        if is_feasible(model, args.epsilon):
            print("FEASIBLE")
        else:
            print("INFEASIBLE")
            return EXIT_REFUSED

    return EXIT_OK


def _option(value, fallback):
    return fallback if value is None else value


def cmd_release(args) -> int:
    plan = load_plan(args.plan)
    dataset = ingest_csv(args.data, strict=not args.lenient)

    total = PrivacyParams(
        _option(args.ledger_epsilon, plan.total_epsilon),
        _option(args.ledger_delta, plan.delta),
    )
    ledger = open_ledger(args.ledger, total)

    report = execute(plan, dataset, ledger, RandomSource())
    written = emit_report(report, args.out)

    for line in report.summary_lines(config.getint("report", "digits", fallback=6)):
        print(line)
    for warning in report.warnings:
        print(f"warning: {warning}")
    print(f"written: {', '.join(written)}")

    return EXIT_OK


def cmd_test_dp(args) -> int:
    catalog = fixtures.mechanism_catalog()
    if args.mechanism not in catalog:
        logger.error(f"Unknown mechanism {args.mechanism}; catalog: {', '.join(catalog)}")
        return EXIT_VALIDATION

    bounds = ClippingBounds(args.lower, args.upper)
    test_config = tester.DpTestConfig(
        claimed=PrivacyParams(args.epsilon, args.delta),
        trials_T=_option(args.trials, config.getint("tester", "trials", fallback=100_000)),
        bins_K=_option(args.bins, config.getint("tester", "bins", fallback=20)),
        confidence_beta=_option(
            args.beta, config.getfloat("tester", "beta", fallback=1e-9)
        ),
        domain_bounds=bounds,
    )

    entry = catalog[args.mechanism]
    mechanism = entry.factory(args.epsilon, bounds)
    if entry.pairs is not None:
        pairs = entry.pairs(bounds)
    else:
        max_size = _option(args.max_size, config.getint("tester", "max_size", fallback=1))
        pairs = tester.generate_neighbor_pairs(bounds, max_size)

    verdict = tester.test_mechanism(
        mechanism,
        pairs,
        test_config,
        RandomSource(seed=args.seed),
        workers=config.getint("tester", "workers", fallback=0) or None,
    )

    with open(args.out, "w", encoding="utf-8") as f:
        f.write(verdict.to_json())

    print(f"{args.mechanism}: {verdict.outcome}")
    print(f"written: {args.out}")

    match verdict.outcome:
        case tester.Outcome.PASS:
            return EXIT_OK
        case tester.Outcome.VIOLATION:
            return EXIT_REFUSED
        case _:
            return EXIT_VALIDATION


def cmd_synth(args) -> int:
    weights = {}
    for item in args.weight or []:
        code, _, weight = item.partition("=")
        weights[code.strip()] = float(weight)

    seed = args.seed if args.seed is not None else config.getint("synth", "seed", fallback=0)
    dataset = synthesize(args.n, seed, weights)
    write_csv(dataset, args.out)

    print(f"rows: {len(dataset)}")
    print(f"written: {args.out}")
    return EXIT_OK


def cmd_bounds(args) -> int:
    dataset = ingest_csv(args.data, strict=not args.lenient)
    values = dataset.column(args.column)

    total = None if args.ledger_epsilon is None else PrivacyParams(args.ledger_epsilon)
    ledger = open_ledger(args.ledger, total)

    def charge(step: int, epsilon: float):
        ledger.charge(f"bounds:{args.column}:{step}", PrivacyParams(epsilon))

    bounds = dp_upper_bound_search(
        values,
        args.epsilon_per_step,
        RandomSource(),
        start=config.getfloat("search", "start", fallback=1.0),
        growth=config.getfloat("search", "growth", fallback=2.0),
        stability_tol=config.getfloat("search", "stability_tol", fallback=0.01),
        max_steps=config.getint("search", "max_steps", fallback=64),
        on_step=charge,
    )

    print(f"{args.column} = {bounds.lower:g}, {bounds.upper:g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = CliParser(
        prog=APP_NAME,
        description="Differentially private query release for ECG feature tables",
    )
    parser.add_argument(
        "-l",
        "--log-level",
        default="INFO",
        choices=LEVELS,
        help="Set the logging level",
    )
    parser.add_argument(
        "--log-systemd",
        action="store_true",
        help="Enable logging to systemd journal",
    )
    parser.add_argument(
        "-c",
        "--config",
        default=config_path,
        help="Specify the configuration file to use",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    ingest = commands.add_parser("ingest", help="Validate a feature table")
    ingest.add_argument("--data", required=True)
    ingest.add_argument("--lenient", action="store_true", help="Drop bad rows")
    ingest.add_argument("--validate", action="store_true", help="Only print counts")
    ingest.add_argument("--out", help="Write the normalized table")
    ingest.set_defaults(func=cmd_ingest)

    feasibility = commands.add_parser("feasibility", help="Economic epsilon bound")
    feasibility.add_argument("--budget", type=float, required=True)
    feasibility.add_argument("--expected-cost", type=float)
    feasibility.add_argument("--population", type=int, required=True)
    feasibility.add_argument("--epsilon", type=float)
    feasibility.add_argument("--annual-affected", type=float)
    feasibility.add_argument("--breach-population", type=float)
    feasibility.add_argument("--breach-cost", type=float)
    feasibility.set_defaults(func=cmd_feasibility)

    release = commands.add_parser("release", help="Run a release plan")
    release.add_argument("--plan", required=True)
    release.add_argument("--data", required=True)
    release.add_argument("--ledger", required=True)
    release.add_argument("--out", required=True)
    release.add_argument("--ledger-epsilon", type=float)
    release.add_argument("--ledger-delta", type=float)
    release.add_argument("--lenient", action="store_true")
    release.set_defaults(func=cmd_release)

    test_dp = commands.add_parser("test-dp", help="Statistically test a mechanism")
    test_dp.add_argument("--mechanism", required=True)
    test_dp.add_argument("--epsilon", type=float, required=True)
    test_dp.add_argument("--delta", type=float, default=0.0)
    test_dp.add_argument("--trials", type=int)
    test_dp.add_argument("--bins", type=int)
    test_dp.add_argument("--beta", type=float)
    test_dp.add_argument("--max-size", type=int)
    test_dp.add_argument("--lower", type=float, default=0.0)
    test_dp.add_argument("--upper", type=float, default=1.0)
    test_dp.add_argument("--seed", type=int)
    test_dp.add_argument("--out", default="dp_verdict.json")
    test_dp.set_defaults(func=cmd_test_dp)

    synth = commands.add_parser("synth", help="Write a synthetic feature table")
    synth.add_argument("--n", type=int, required=True)
    synth.add_argument("--seed", type=int)
    synth.add_argument("--out", required=True)
    synth.add_argument("--weight", action="append", help="Rhythm weight, CODE=W")
    synth.set_defaults(func=cmd_synth)

    bounds = commands.add_parser("bounds", help="Search a clipping upper bound")
    bounds.add_argument("--data", required=True)
    bounds.add_argument("--column", required=True)
    bounds.add_argument("--ledger", required=True)
    bounds.add_argument("--epsilon-per-step", type=float, required=True)
    bounds.add_argument("--ledger-epsilon", type=float)
    bounds.add_argument("--lenient", action="store_true")
    bounds.set_defaults(func=cmd_bounds)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)

    setup_logging(args.log_level, args.log_systemd, APP_NAME)
    config.read(args.config)

    try:
        return args.func(args)
    except json.JSONDecodeError as e:
        logger.error(f"{args.command}: malformed file: {e}")
        return EXIT_VALIDATION
    except (PrivacyError, ReleaseError, OSError, ValueError) as e:
        logger.error(f"{args.command}: {e}")
        return exit_code(e)


if __name__ == "__main__":
    sys.exit(main())
