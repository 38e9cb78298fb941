"""Accuracy of every method on the All scenario with conflicting label layouts.

    python3 scripts/interference_table.py --seeds 1,2,3,4,5
"""

import argparse

import numpy as np

from fedrouter.adapter import TrainConfig
from fedrouter.baselines import run_fedavg, run_fedcluster, run_local_only
from fedrouter.datagen import ScenarioConfig, build_scenario
from fedrouter.server import FederationConfig, run_federation


def run_all(seed: int, conflict: bool) -> dict[str, float]:
    fed = build_scenario(ScenarioConfig(scenario="all", conflict=conflict, master_seed=seed))
    cfg, tcfg = FederationConfig(master_seed=seed), TrainConfig()
    runs = {
        "fedrouter": run_federation(fed, cfg, tcfg),
        "fedrouter-star": run_federation(fed, FederationConfig(master_seed=seed, mode="star"), tcfg),
        "fedavg": run_fedavg(fed, cfg, tcfg),
        "local": run_local_only(fed, cfg, tcfg),
        "fedcluster": run_fedcluster(fed, cfg, tcfg),
    }
    return {k: r.report.final.accuracy for k, r in runs.items()}


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", default="1,2,3,4,5")
    p.add_argument("--no-conflict", action="store_true")
    args = p.parse_args()
    seeds = [int(s) for s in args.seeds.split(",")]
    per_seed = [run_all(s, not args.no_conflict) for s in seeds]
    print(f"{'method':>15}  mean    std")
    for method in per_seed[0]:
        acc = np.array([r[method] for r in per_seed])
        std = acc.std(ddof=1) if len(acc) > 1 else float("nan")
        print(f"{method:>15}  {acc.mean():.4f}  {std:.4f}")


if __name__ == "__main__":
    main()
