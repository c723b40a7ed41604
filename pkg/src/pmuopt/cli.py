"""Command-line interface: ``pmuopt {validate,optimize,evaluate,sweep}``.

Every option can also be set through an environment variable named
``PMUOPT_<OPTION>`` (dashes become underscores, e.g. ``PMUOPT_SEED=3``);
explicit flags win. Exit codes: 0 success, 1 usage, 2 input, 3 numerical.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from pmuopt import evalharness as eh
from pmuopt.detection import DEFAULT_ARL0
from pmuopt.jacobian import FILL_MODES
from pmuopt.netmodel import (
    CaseFormatError,
    bridge_lines,
    in_service_count,
    is_connected,
    load_case,
    operating_point,
)
from pmuopt.placement import (
    GAConfig,
    Placement,
    PlacementError,
    exhaustive_search,
    ga_optimize,
    strategy_degree,
    strategy_full,
    strategy_scattered,
    strategy_tree,
)
from pmuopt.sampling import DEFAULT_DT, DEFAULT_SAMPLES, DEFAULT_SIGMA, RandomStream

log = logging.getLogger("pmuopt")

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3
ENV_PREFIX = "PMUOPT_"
STRATEGIES = ("scattered", "tree", "degree", "ga", "full")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.replace(" ", "").split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _add_model_args(p):
    p.add_argument("--sigma", type=float, default=DEFAULT_SIGMA,
                   help="per-unit active-power noise scale")
    p.add_argument("--dt", type=float, default=DEFAULT_DT,
                   help="sampling interval in seconds")
    p.add_argument("--seed", type=int, default=0, help="master random seed")
    p.add_argument("--jobs", type=int, default=1,
                   help="worker processes; results do not depend on it")


def _add_ga_args(p):
    g = p.add_argument_group("genetic algorithm")
    g.add_argument("--generations", type=int, default=50, help="number of generations")
    g.add_argument("--population", type=int, default=100, help="population size after selection")
    g.add_argument("--initial", type=int, default=100, help="initial population size")
    g.add_argument("--mutate-prob", type=float, default=0.2, help="per-individual mutation probability")
    g.add_argument("--shuffle-prob", type=float, default=0.05,
                   help="per-bus index shuffle probability")
    g.add_argument("--tournament-size", type=int, default=3, help="individuals per selection tournament")
    g.add_argument("--crossover-prob", type=float, default=0.0,
                   help="count-preserving crossover probability; 0 disables")
    g.add_argument("--exclude-reference", action="store_true",
                   help="never place a PMU on the reference bus")
    g.add_argument("--samples", type=int, default=DEFAULT_SAMPLES,
                   help="operating-point samples for the objective")
    g.add_argument("--fill", choices=FILL_MODES, default="zero",
                   help="treatment of Jacobian elements touching unobserved buses")


def _add_eval_args(p):
    g = p.add_argument_group("Monte Carlo evaluation")
    g.add_argument("--replications", type=int, default=100,
                   help="replications per outage line")
    g.add_argument("--pre-samples", type=int, default=60,
                   help="pre-outage samples per replication")
    g.add_argument("--horizon", type=int, default=300,
                   help="post-outage samples before declaring a miss")
    g.add_argument("--arl0", type=float, default=DEFAULT_ARL0,
                   help="in-control average run length setting the threshold")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pmuopt", description=__doc__.splitlines()[0],
                     formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("validate", help="parse a case file and report its topology")
    p.add_argument("case", help="case file path or bundled case name (case9, case14, case39)")

    p = sub.add_parser("optimize", help="search for the best placement of a fixed number of PMUs")
    p.add_argument("case", help="case file path or bundled case name")
    p.add_argument("--pmus", type=int, required=True, help="number of PMUs to place")
    p.add_argument("--exhaustive", action="store_true",
                   help="also run the exhaustive search and report whether both agree")
    p.add_argument("--output", type=Path, help="JSON output file; standard output when omitted")
    _add_model_args(p)
    _add_ga_args(p)

    p = sub.add_parser("evaluate", help="Monte Carlo outage detection/identification for a placement")
    p.add_argument("case", help="case file path or bundled case name")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--placement", type=_int_list, help="comma-separated PMU bus ids")
    src.add_argument("--strategy", choices=STRATEGIES, help="placement strategy")
    p.add_argument("--pmus", type=int, help="PMU count for --strategy (except full)")
    p.add_argument("--output-json", type=Path, help="full report; standard output when omitted")
    p.add_argument("--output-csv", type=Path, help="top-3 heatmap matrix")
    p.add_argument("--output-csv-top1", type=Path, help="top-1 heatmap matrix")
    _add_model_args(p)
    _add_eval_args(p)
    _add_ga_args(p)

    p = sub.add_parser("sweep", help="best objective values as the PMU count varies")
    p.add_argument("case", help="case file path or bundled case name")
    p.add_argument("--counts", type=_int_list, default=list(eh.DEFAULT_COUNTS),
                   help="comma-separated PMU counts")
    p.add_argument("--output", type=Path, help="JSON output file; standard output when omitted")
    _add_model_args(p)
    _add_ga_args(p)

    for sp in sub.choices.values():
        sp.add_argument("-q", "--quiet", action="store_true", help="suppress progress messages")
        sp.formatter_class = argparse.ArgumentDefaultsHelpFormatter
        _apply_env(sp)
    _apply_env(parser)
    return parser


def _apply_env(parser: argparse.ArgumentParser) -> None:
    for action in parser._actions:
        if not action.option_strings or action.dest in ("help",):
            continue
        raw = os.environ.get(ENV_PREFIX + action.dest.upper())
        if raw is None:
            continue
        if isinstance(action, argparse._StoreTrueAction):
            value = raw.strip().lower() in ("1", "true", "yes", "on")
        elif action.type is not None:
            try:
                value = action.type(raw)
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"{ENV_PREFIX}{action.dest.upper()}: {exc}") from None
        else:
            value = raw
        if action.choices is not None and value not in action.choices:
            raise UsageError(f"{ENV_PREFIX}{action.dest.upper()}: invalid choice {value!r}")
        action.default = value
        action.required = False


def _ga_config(args) -> GAConfig:
    return GAConfig(
        generations=args.generations,
        population=args.population,
        initial_count=args.initial,
        mutate_prob=args.mutate_prob,
        shuffle_prob=args.shuffle_prob,
        tournament_size=args.tournament_size,
        crossover_prob=args.crossover_prob,
        exclude_reference=args.exclude_reference,
        seed=args.seed,
    )


def _check_common(args) -> None:
    if args.sigma <= 0 or args.dt <= 0:
        raise UsageError("--sigma and --dt must be positive")
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    if hasattr(args, "samples") and args.samples < 1:
        raise UsageError("--samples must be >= 1")


def _emit(text: str, path: Path | None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        path.write_text(text)
        log.info("wrote %s", path)


def cmd_validate(args) -> int:
    net = load_case(args.case)
    connected = is_connected(net)
    bridges = bridge_lines(net) if connected else []
    summary = {
        "buses": net.n_bus,
        "branches": len(net.branches),
        "in_service_branches": in_service_count(net),
        "slack": net.reference,
        "base_mva": net.base_mva,
        "connected": connected,
        "bridges": [
            {"line": i + 1, "from": net.branches[i].from_bus, "to": net.branches[i].to_bus}
            for i in bridges
        ],
    }
    if not connected:
        log.warning("warning: the in-service network is not connected")
    log.info("%d buses, %d branches, slack bus %d", net.n_bus, len(net.branches), net.reference)
    sys.stdout.write(json.dumps(summary, indent=2) + "\n")
    return EXIT_OK


def cmd_optimize(args) -> int:
    _check_common(args)
    net = load_case(args.case)
    base = operating_point(net)
    cfg = _ga_config(args)
    samples, objective = eh.objective_for(net, base, args.sigma, args.dt, args.samples, args.seed, args.fill)
    log.info("running GA: %d PMUs on %d buses", args.pmus, net.n_bus)
    res = ga_optimize(net, base, samples, args.pmus, cfg, objective=objective)
    buses = res.placement.buses(net)
    out = {
        "case": str(args.case),
        "n_pmus": args.pmus,
        "placement": buses,
        "delta": res.delta,
        "history": [eh.sig6(h) for h in res.history],
        "top30": [eh.sig6(v) for v in res.top(eh.TOP_K)],
        "config": {**cfg.__dict__, "sigma": args.sigma, "dt": args.dt, "samples": args.samples,
                   "fill": args.fill},
    }
    if args.exhaustive:
        ex_place, ex_delta = exhaustive_search(net, base, samples, args.pmus, args.exclude_reference,
                                               objective=objective)
        out["exhaustive"] = {"placement": ex_place.buses(net), "delta": ex_delta,
                             "agrees": ex_delta == res.delta}
    log.info("best placement: %s  delta=%.6g", ", ".join(map(str, buses)), res.delta)
    _emit(json.dumps(out, indent=2) + "\n", args.output)
    return EXIT_OK


def _resolve_placement(args, net, base) -> Placement:
    if args.placement is not None:
        return Placement.from_buses(net, args.placement)
    if args.strategy == "full":
        return strategy_full(net)
    if args.pmus is None:
        raise UsageError(f"--strategy {args.strategy} needs --pmus")
    stream = RandomStream(args.seed, stream_id=2)
    if args.strategy == "scattered":
        return strategy_scattered(net, args.pmus, stream)
    if args.strategy == "tree":
        return strategy_tree(net, args.pmus, stream)
    if args.strategy == "degree":
        return strategy_degree(net, args.pmus)
    samples, objective = eh.objective_for(net, base, args.sigma, args.dt, args.samples, args.seed, args.fill)
    return ga_optimize(net, base, samples, args.pmus, _ga_config(args), objective=objective).placement


def cmd_evaluate(args) -> int:
    _check_common(args)
    net = load_case(args.case)
    base = operating_point(net)
    placement = _resolve_placement(args, net, base)
    if placement.n_p == 0:
        raise PlacementError("placement has no PMUs")
    cfg = eh.EvalConfig(
        replications=args.replications,
        pre_outage_samples=args.pre_samples,
        post_outage_horizon=args.horizon,
        sigma=args.sigma,
        dt=args.dt,
        arl0=args.arl0,
        seed=args.seed,
    )
    log.info("evaluating placement %s", ", ".join(map(str, placement.buses(net))))
    report = eh.evaluate_placement(net, base, placement, cfg, jobs=args.jobs)
    if args.output_csv is not None:
        _emit(report.to_csv("top3"), args.output_csv)
    if args.output_csv_top1 is not None:
        _emit(report.to_csv("top1"), args.output_csv_top1)
    _emit(report.to_json(), args.output_json)
    s = report.summary()
    log.info("mean detection %.4g, top-3 accuracy %.4g, top-1 accuracy %.4g",
             s["mean_detection"], s["mean_top3"], s["mean_top1"])
    return EXIT_OK


def cmd_sweep(args) -> int:
    _check_common(args)
    if not args.counts:
        raise UsageError("--counts must list at least one PMU count")
    net = load_case(args.case)
    base = operating_point(net)
    report = eh.sweep_pmu_count(net, base, args.counts, _ga_config(args), args.sigma, args.dt,
                                args.samples, fill=args.fill, jobs=args.jobs)
    for k in report.counts:
        log.info("%3d PMUs: best delta %.6g", k, report.best[k])
    _emit(report.to_json(), args.output)
    return EXIT_OK


COMMANDS = {"validate": cmd_validate, "optimize": cmd_optimize, "evaluate": cmd_evaluate, "sweep": cmd_sweep}


def _configure_logging(quiet: bool) -> None:
    # progress goes to the current stderr through the package logger only
    logger = logging.getLogger("pmuopt")
    for h in list(logger.handlers):
        logger.removeHandler(h)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(message)s"))
    logger.addHandler(handler)
    logger.setLevel(logging.WARNING if quiet else logging.INFO)
    logger.propagate = False


def main(argv=None) -> int:
    try:
        parser = build_parser()
    except UsageError as exc:
        print(f"pmuopt: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    args = parser.parse_args(argv)
    _configure_logging(args.quiet)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"pmuopt: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except np.linalg.LinAlgError as exc:
        print(f"pmuopt: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CaseFormatError, PlacementError, OSError, ValueError, IndexError) as exc:
        print(f"pmuopt: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
