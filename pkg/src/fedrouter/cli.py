"""Command line entry point: ``run``, ``silhouette`` and ``export-embeddings``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from fedrouter.datagen import SCENARIOS, build_scenario
from fedrouter.harness import (
    METHODS,
    ConfigError,
    ExperimentConfig,
    export_embeddings,
    load_config,
    parse_config,
    run_experiment,
    silhouette_report,
    with_overrides,
    write_silhouette_csv,
)

log = logging.getLogger("fedrouter")


def _seed_list(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}") from None


def _base_config(args) -> ExperimentConfig:
    return load_config(args.config) if args.config else parse_config({})


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fedrouter", description="Task-centric federated learning simulator.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a (method x scenario x seed) grid")
    run.add_argument("--config", required=True, type=Path)
    run.add_argument("--method", choices=METHODS, help="run only this method")
    run.add_argument("--scenario", choices=SCENARIOS, help="run only this scenario")
    run.add_argument("--eval-mode", choices=("local", "global"))
    run.add_argument("--seeds", type=_seed_list)
    run.add_argument("--auto-k", action="store_true", help="pick cluster counts by silhouette")
    run.add_argument("--jobs", type=int, help="worker processes for grid cells")
    run.add_argument("--out", type=Path, default=Path("runs"))

    sil = sub.add_parser("silhouette", help="silhouette score against k")
    sil.add_argument("--scope", choices=("local", "global"), required=True)
    sil.add_argument("--config", type=Path, help="take scenario settings from this config")
    sil.add_argument("--scenario", choices=SCENARIOS, action="append", help="repeatable; default: config scenarios")
    sil.add_argument("--seeds", type=_seed_list)
    sil.add_argument("--k-min", type=int, default=2)
    sil.add_argument("--k-max", type=int, default=8)
    sil.add_argument("--out", type=Path, default=Path("silhouette.csv"))

    emb = sub.add_parser("export-embeddings", help="write per-client embedding CSVs with cluster labels")
    emb.add_argument("--config", type=Path, help="take scenario settings from this config")
    emb.add_argument("--scenario", choices=SCENARIOS)
    emb.add_argument("--seed", type=int)
    emb.add_argument("--out", type=Path, default=Path("embeddings"))
    return p


def cmd_run(args) -> int:
    cfg = with_overrides(
        load_config(args.config),
        methods=[args.method] if args.method else None,
        scenarios=[args.scenario] if args.scenario else None,
        eval_mode=args.eval_mode,
        seeds=args.seeds,
        auto_k=True if args.auto_k else None,
        jobs=args.jobs,
    )
    result = run_experiment(cfg, args.out)
    for row in result.summary_dicts():
        std = f" +/- {float(row['std']):.4f}" if row["std"] else ""
        print(f"{row['method']:>15} {row['scenario']:>6}  acc {float(row['mean']):.4f}{std}  (n={row['n_seeds']})")
    print(f"artifacts in {args.out}")
    return 0


def cmd_silhouette(args) -> int:
    cfg = with_overrides(_base_config(args), scenarios=args.scenario, seeds=args.seeds)
    if args.k_min < 2 or args.k_max < args.k_min:
        raise ConfigError(f"invalid k range [{args.k_min}, {args.k_max}]")
    tables = []
    for scenario in cfg.scenarios:
        for seed in cfg.seeds:
            fed = build_scenario(cfg.scenario_config(scenario, seed))
            table = silhouette_report(fed, args.scope, (args.k_min, args.k_max))
            if table is None:
                print(f"{scenario}: local silhouette not applied (one task per client)")
                break
            tables.append(table)
            print(f"{args.scope:>6} {scenario:>6} seed {seed}: argmax k = {table.argmax}")
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_silhouette_csv(args.out, tables, cfg.header(cfg.seeds_label()))
    return 0


def cmd_export(args) -> int:
    over = {}
    if args.scenario:
        over["scenarios"] = [args.scenario]
    if args.seed is not None:
        over["seeds"] = [args.seed]
    cfg = with_overrides(_base_config(args), **over)
    scenario, seed = cfg.scenarios[0], cfg.seeds[0]
    fed = build_scenario(cfg.scenario_config(scenario, seed))
    paths = export_embeddings(fed, args.out, comment=cfg.header(seed))
    print(f"wrote {len(paths)} files to {args.out}")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    handler = {"run": cmd_run, "silhouette": cmd_silhouette, "export-embeddings": cmd_export}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
