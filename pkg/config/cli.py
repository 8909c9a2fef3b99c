# elasticdb/config/cli.py
"""
Bench command line.

Commands:
  bench run --experiment <name> [--profile desk|full] [--scheme <s>] [--nodes <n>]
            [--clients <c>] [--duration <s>] [--repartition-at <s>] [--seed <u64>]
            [--config <file>] [--out <dir>] [--trace] [--<cluster field> <value> ...]
  bench validate [--seeds <n>]

Every ClusterConfig field is also a flag (`--page_size 8192`). Flags win
over --config, which wins over the profile.
Exit code 0 means the run finished (or every check passed).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from elasticdb.config import ClusterConfig, cluster_config, configure_logging, load_config_file, settings, validate_config
from elasticdb.core.errors import ConfigError, MigrationTimeout, UnknownExperiment

logger = logging.getLogger("elasticdb.config.cli")


def build_parser() -> argparse.ArgumentParser:
    from elasticdb.bench.experiments import EXPERIMENTS

    parser = argparse.ArgumentParser(prog="elasticdb", description="Elastic shared-nothing DBMS simulator")
    parser.add_argument("--log-level", default=None, help="DEBUG | INFO | WARNING | ERROR")
    top = parser.add_subparsers(dest="command", required=True)
    bench = top.add_parser("bench", help="run experiments or the invariant suite")
    sub = bench.add_subparsers(dest="action", required=True)

    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("--experiment", required=True, choices=sorted(EXPERIMENTS))
    run.add_argument("--profile", default="desk", choices=["desk", *sorted(settings.profiles)])
    run.add_argument("--scheme", choices=["physical", "logical", "physiological"])
    run.add_argument("--nodes", type=int)
    run.add_argument("--clients", type=int)
    run.add_argument("--duration", type=float)
    run.add_argument("--repartition-at", type=float, dest="repartition_at")
    run.add_argument("--seed", type=int, default=settings.cluster.rng_seed)
    run.add_argument("--config", type=Path)
    run.add_argument("--out", type=Path, default=Path("out"))
    run.add_argument("--trace", action="store_true")
    fields = run.add_argument_group("cluster fields")
    for name in ClusterConfig.model_fields:
        fields.add_argument(f"--{name}", dest=f"field_{name}", default=None, metavar="VALUE")

    validate = sub.add_parser("validate", help="run the invariant suite")
    validate.add_argument("--seeds", type=int, default=100)
    return parser


def resolve_config(args: argparse.Namespace) -> ClusterConfig:
    cfg = cluster_config(args.profile)
    if args.config is not None:
        cfg = load_config_file(args.config, cfg)
    overrides = {k[len("field_"):]: v for k, v in vars(args).items() if k.startswith("field_") and v is not None}
    if args.nodes is not None:
        overrides["node_count"] = args.nodes
    if overrides:
        cfg = cluster_config(args.profile, **{**cfg.model_dump(), **overrides})
    return validate_config(cfg)


def _run(args: argparse.Namespace) -> int:
    from elasticdb.bench.experiments import RunOptions, run_experiment
    from elasticdb.partitioning.audit import Scheme

    cfg = resolve_config(args)
    opts = RunOptions(
        scheme=Scheme(args.scheme) if args.scheme else None,
        clients=args.clients,
        duration=args.duration,
        repartition_at=args.repartition_at,
        seed=args.seed,
        trace=args.trace,
    )
    result = run_experiment(args.experiment, cfg, settings.bench, opts)
    out = args.out / args.experiment
    for path in result.write(out):
        print(f"wrote {path}")
    return 0


def _validate(args: argparse.Namespace) -> int:
    from elasticdb.bench.validate import run_validation

    results = run_validation(args.seeds)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.ok]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 0 if not failed else 1


def run(argv: list[str] | None = None) -> int:
    """Entry point called from __main__.py"""
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        if args.action == "run":
            return _run(args)
        return _validate(args)
    except ConfigError as e:
        for problem in e.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return 2
    except UnknownExperiment as e:
        print(str(e), file=sys.stderr)
        return 2
    except MigrationTimeout as e:
        print(f"run failed: {e}", file=sys.stderr)
        return 1
