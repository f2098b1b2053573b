"""
Command line for the market simulator.

    python run.py gen --seed 7 --count 20 --out instances.txt
    python run.py run-rma --instances instances.txt --seed 3
    python run.py sweep --kind N --values 10,20,30 --mechanisms rma,benchmark --seed 1 --out sweep.csv

Every subcommand accepts --config FILE (key=value lines) and repeated --set KEY=VALUE
overrides; dedicated flags win over both. Exit codes: 0 ok, 1 property failure,
2 error.
"""
import argparse
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import pandas as pd
from tabulate import tabulate

from flmarket.core.config import get_settings
from flmarket.core.constants import (
    EXIT_ERROR, EXIT_OK, EXIT_PROPERTY_FAILURE, GRID_COLUMNS, MechanismNames,
)
from flmarket.core.exceptions import ConfigurationError, MarketError
from flmarket.core.logging_config import app_logger, logger
from flmarket.core.run_config import RunConfig, load_run_config, parse_overrides
from flmarket.schemas.market import AuctionOutcome
from flmarket.schemas.scenario import MarketInstance, SweepSpec
from flmarket.services import market_model as mm
from flmarket.services.conflict_graph import ConflictGraph
from flmarket.services.drl_training_service import train
from flmarket.services.drla_service import DrlaParams, run_drla
from flmarket.services.experiment_service import (
    build_mechanism, evaluate_mechanisms, generate_instances, instance_seeds, sweep,
)
from flmarket.services.fedsim_service import fit_quality_params, make_task, run_grid
from flmarket.services.oracle_service import optimal_welfare
from flmarket.services.property_service import (
    CHECKS, PayYourBidMechanism, reports_to_frame, run_property_checks,
)
from flmarket.services.rma_service import run_rma
from flmarket.utils.csv_io import read_table, write_table
from flmarket.utils.instance_io import read_instances, write_instances

PROPERTY_MECHANISMS = MechanismNames.ALL + [MechanismNames.PAY_YOUR_BID]


def _split(value: Optional[str]) -> List[str]:
    return [part.strip() for part in value.split(",") if part.strip()] if value else []


def _run_config(args: argparse.Namespace, **flags) -> RunConfig:
    overrides: Dict[str, object] = parse_overrides(args.set)
    overrides.update({k: v for k, v in flags.items() if v is not None})
    return load_run_config(args.config, overrides)


def _instances(args: argparse.Namespace, run: RunConfig, count: Optional[int] = None) -> List[MarketInstance]:
    """Instances from --instances, otherwise drawn from the scenario with --seed."""
    if getattr(args, "instances", None):
        return read_instances(args.instances)
    if args.seed is None:
        raise ConfigurationError("pass --instances FILE or --seed to draw instances")
    return generate_instances(run.scenario, run.market, count or args.count, args.seed)


def _outcome_rows(instance: MarketInstance, outcome: AuctionOutcome) -> List[Dict[str, object]]:
    return [
        {
            "seed": instance.seed,
            "owner": o.owner_id,
            "winner": o.owner_id in outcome.winners,
            "bid": o.bid,
            "payment": outcome.payment(o.owner_id),
            "group": outcome.group_of.get(o.owner_id, ""),
            "branch": outcome.payment_branch.get(o.owner_id, ""),
        }
        for o in instance.owners
    ]


def _print_outcomes(instances: Sequence[MarketInstance], outcomes: Sequence[AuctionOutcome]):
    table = [
        [inst.seed, inst.n_owners, out.worker_count, out.social_welfare, sum(out.payments.values())]
        for inst, out in zip(instances, outcomes)
    ]
    print(tabulate(table, headers=["seed", "N", "W", "S", "payments"], floatfmt=".4f"))


def _run_auctions(args: argparse.Namespace, mechanism: str) -> int:
    run = _run_config(args)
    instances = _instances(args, run)
    if mechanism == MechanismNames.RMA:
        if args.seed is None:
            raise ConfigurationError("run-rma needs --seed for the group order")
        seeds = instance_seeds(args.seed, len(instances))
        outcomes = [run_rma(inst.owners, run.market, s) for inst, s in zip(instances, seeds)]
    else:
        params = DrlaParams.load(args.params)
        outcomes = [run_drla(inst.owners, run.market, params) for inst in instances]

    _print_outcomes(instances, outcomes)
    if args.out:
        rows = [row for inst, out in zip(instances, outcomes) for row in _outcome_rows(inst, out)]
        write_table(pd.DataFrame(rows), args.out)
    return EXIT_OK


def cmd_gen(args: argparse.Namespace) -> int:
    run = _run_config(args, n_owners=args.n_owners)
    instances = generate_instances(run.scenario, run.market, args.count, args.seed)
    write_instances(args.out, instances)

    table = []
    for inst in instances:
        costs = [mm.owner_cost_breakdown(o, run.market) for o in inst.owners]
        graph = ConflictGraph.from_owners(inst.owners)
        table.append([
            inst.seed,
            inst.n_owners,
            graph.edge_count(),
            sum(c["data"] for c in costs) / max(inst.n_owners, 1),
            sum(c["compute"] for c in costs) / max(inst.n_owners, 1),
            sum(c["comm"] for c in costs) / max(inst.n_owners, 1),
        ])
    print(tabulate(table, headers=["seed", "N", "conflicts", "mean data", "mean compute", "mean comm"],
                   floatfmt=".5f"))
    return EXIT_OK


def cmd_run_rma(args: argparse.Namespace) -> int:
    return _run_auctions(args, MechanismNames.RMA)


def cmd_run_drla(args: argparse.Namespace) -> int:
    return _run_auctions(args, MechanismNames.DRLA)


def cmd_train_drla(args: argparse.Namespace) -> int:
    run = _run_config(args, n_owners=args.n_owners, episodes=args.episodes, seed=args.seed)
    if args.train_instances:
        train_set = read_instances(args.train_instances)
    else:
        train_set = generate_instances(run.scenario, run.market, run.scenario.train_count, args.seed)
    validation = generate_instances(run.scenario, run.market, run.scenario.validation_count, args.seed + 1)

    result = train(
        [inst.owners for inst in train_set],
        run.market,
        run.train,
        hyper=run.hyper,
        validation=[inst.owners for inst in validation],
        log_path=args.log,
        checkpoint_path=args.out,
        show_progress=args.progress,
    )
    log = result["log"]
    print(tabulate(log.tail(10), headers="keys", showindex=False, floatfmt=".4f"))
    print(f"parameters written to {args.out} after {result['updates']} updates")
    return EXIT_OK


def cmd_oracle(args: argparse.Namespace) -> int:
    run = _run_config(args)
    instances = _instances(args, run)
    compare = _split(args.compare)
    if compare:
        params = DrlaParams.load(args.params) if args.params else None
        frame = evaluate_mechanisms(instances, compare, run.market, drla_params=params)
        summary = frame.groupby("mechanism").agg(
            mean_S=("welfare", "mean"), mean_W=("workers", "mean"), median_ratio=("ratio", "median"),
        ).reset_index()
        print(tabulate(summary, headers="keys", showindex=False, floatfmt=".4f"))
        if args.out:
            write_table(frame, args.out)
        return EXIT_OK

    rows = []
    for inst in instances:
        result = optimal_welfare(inst.owners, run.market)
        rows.append({"seed": inst.seed, "best_welfare": result.best_welfare,
                     "best_set": " ".join(str(i) for i in result.best_set),
                     "evaluated": result.evaluated_count})
    frame = pd.DataFrame(rows)
    print(tabulate(frame, headers="keys", showindex=False, floatfmt=".4f"))
    if args.out:
        write_table(frame, args.out)
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    run = _run_config(args, n_owners=args.n_owners)
    spec = SweepSpec(
        kind=args.kind,
        values=[float(v) for v in _split(args.values)],
        mechanisms=_split(args.mechanisms) or [MechanismNames.RMA],
        instances=args.count,
        seed=args.seed,
    )
    params = DrlaParams.load(args.params) if args.params else None
    frame = sweep(spec, run.scenario, run.market, drla_params=params, show_progress=args.progress)
    print(tabulate(frame, headers="keys", showindex=False, floatfmt=".4f"))
    if args.out:
        write_table(frame, args.out)
    return EXIT_OK


def cmd_fedsim_fit(args: argparse.Namespace) -> int:
    run = _run_config(args)
    if args.grid:
        grid = read_table(args.grid, required_columns=["D", "Delta", "accuracy"])
    else:
        if args.seed is None:
            raise ConfigurationError("fedsim-fit needs --grid FILE or --seed to simulate the grid")
        task = make_task(run.task.model_copy(update={"seed": args.seed}))
        grid = run_grid(task, run.grid, run.fed.model_copy(update={"seed": args.seed}))
        if args.grid_out:
            write_table(grid[GRID_COLUMNS], args.grid_out)

    fixed = {k: float(v) for k, v in parse_overrides(_split(args.fix)).items()}
    fit = fit_quality_params(grid, fixed=fixed, restarts=args.restarts, seed=args.seed or 0)
    table = [[name, value, "fixed" if name in fit.fixed else ""] for name, value in fit.params.items()]
    print(tabulate(table, headers=["parameter", "value", ""], floatfmt=".6g"))
    print(f"R^2={fit.r_squared:.4f} sse={fit.sse:.6g} alpha in [{fit.alpha_range[0]:.4f}, {fit.alpha_range[1]:.4f}] "
          f"({fit.successful_restarts}/{fit.restarts} restarts usable)")
    return EXIT_OK


def cmd_properties(args: argparse.Namespace) -> int:
    run = _run_config(args, n_owners=args.n_owners)
    instances = _instances(args, run)
    params = DrlaParams.load(args.params) if args.params else None
    if args.mechanism == MechanismNames.PAY_YOUR_BID:
        mechanism = PayYourBidMechanism(build_mechanism(MechanismNames.RMA, run.market, args.seed or 0))
    else:
        mechanism = build_mechanism(args.mechanism, run.market, args.seed or 0, drla_params=params)

    reports = run_property_checks(mechanism, instances, run.market, checks=_split(args.checks) or None,
                                  trials=args.trials)
    frame = reports_to_frame(reports)
    print(tabulate(frame, headers="keys", showindex=False, floatfmt=".3g"))
    if args.out:
        write_table(frame, args.out)
    return EXIT_OK if all(r.passed for r in reports) else EXIT_PROPERTY_FAILURE


def _common(parser: argparse.ArgumentParser, seed_required: bool = False):
    parser.add_argument("--config", help="key=value run configuration file")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    parser.add_argument("--seed", type=int, required=seed_required, help="seed for everything randomized")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flmarket", description="Federated-learning services market simulator")
    parser.add_argument("--log-level", help="override LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="draw random instances into an instance file")
    _common(p, seed_required=True)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--n-owners", type=int)
    p.add_argument("--out", required=True, help="instance file to write")
    p.set_defaults(handler=cmd_gen)

    for name, handler in (("run-rma", cmd_run_rma), ("run-drla", cmd_run_drla)):
        p = sub.add_parser(name, help=f"run {name[4:].upper()} on each instance")
        _common(p)
        p.add_argument("--instances", help="instance file; drawn from the scenario when omitted")
        p.add_argument("--count", type=int, default=10)
        p.add_argument("--out", help="per-owner outcome CSV")
        if name == "run-drla":
            p.add_argument("--params", required=True, help="trained DRLA parameter file")
        p.set_defaults(handler=handler)

    p = sub.add_parser("train-drla", help="train the DRLA scoring network")
    _common(p, seed_required=True)
    p.add_argument("--train-instances", help="instance file used as the training set")
    p.add_argument("--n-owners", type=int)
    p.add_argument("--episodes", type=int)
    p.add_argument("--out", required=True, help="parameter file to write")
    p.add_argument("--log", help="training log CSV")
    p.add_argument("--progress", action="store_true")
    p.set_defaults(handler=cmd_train_drla)

    p = sub.add_parser("oracle", help="exact welfare optimum, optionally compared with mechanisms")
    _common(p)
    p.add_argument("--instances")
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--compare", help=f"comma-separated mechanisms from {MechanismNames.ALL}")
    p.add_argument("--params", help="trained DRLA parameters when comparing drla")
    p.add_argument("--out")
    p.set_defaults(handler=cmd_oracle)

    p = sub.add_parser("sweep", help="mean welfare and worker count over a swept quantity")
    _common(p, seed_required=True)
    p.add_argument("--kind", required=True, choices=["N", "d_max", "sigma_max", "G"])
    p.add_argument("--values", required=True, help="comma-separated sweep values")
    p.add_argument("--mechanisms", help="comma-separated mechanisms, rma by default")
    p.add_argument("--count", type=int, default=100, help="test instances per value")
    p.add_argument("--n-owners", type=int)
    p.add_argument("--params")
    p.add_argument("--out")
    p.add_argument("--progress", action="store_true")
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("fedsim-fit", help="fit the data-quality curve to a FedAvg accuracy grid")
    _common(p)
    p.add_argument("--grid", help="existing grid CSV with columns D, Delta, accuracy")
    p.add_argument("--grid-out", help="where to write a simulated grid")
    p.add_argument("--fix", help="comma-separated NAME=VALUE pairs held constant, e.g. kappa3=0.001")
    p.add_argument("--restarts", type=int, default=20)
    p.set_defaults(handler=cmd_fedsim_fit)

    p = sub.add_parser("properties", help="check truthfulness, rationality and accounting")
    _common(p)
    p.add_argument("--mechanism", required=True, choices=PROPERTY_MECHANISMS)
    p.add_argument("--instances")
    p.add_argument("--count", type=int, default=50)
    p.add_argument("--n-owners", type=int)
    p.add_argument("--checks", help=f"comma-separated subset of {CHECKS}")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--params")
    p.add_argument("--out", help="report CSV")
    p.set_defaults(handler=cmd_properties)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.log_level:
        app_logger.set_level(args.log_level)
    logger.debug(f"{get_settings().APP_NAME}: {args.command}")
    try:
        return args.handler(args)
    except MarketError as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_ERROR
    except (OSError, ValueError) as e:
        logger.error(f"{args.command} failed: {e}", exc_info=get_settings().is_development)
        return EXIT_ERROR


if __name__ == "__main__":
    try:
        sys.exit(main())
    finally:
        app_logger.cleanup()
