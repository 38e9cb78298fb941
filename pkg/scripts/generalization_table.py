"""Train on one task per client, test on every task.

Compares router global mode, router local mode, FedAvg and local-only
training, and reports how often global mode picks the right task cluster.

    python3 scripts/generalization_table.py --seeds 1,2,3,4,5
"""

import argparse

import numpy as np

from fedrouter.adapter import TrainConfig
from fedrouter.baselines import run_fedavg, run_local_only
from fedrouter.datagen import ScenarioConfig, build_scenario
from fedrouter.server import FederationConfig, run_federation


def main():
    p = argparse.ArgumentParser(description="test-time shift table")
    p.add_argument("--seeds", default="1,2,3,4,5")
    args = p.parse_args()
    rows = {"fedrouter (global)": [], "fedrouter (local)": [], "fedavg": [], "local": []}
    routing = []
    for seed in (int(s) for s in args.seeds.split(",")):
        fed = build_scenario(ScenarioConfig(scenario="single", test_all_tasks=True, master_seed=seed))
        tcfg = TrainConfig()
        glob = run_federation(fed, FederationConfig(master_seed=seed, eval_mode="global"), tcfg)
        rows["fedrouter (global)"].append(glob.report.final.accuracy)
        routing.append(glob.report.final.routing_accuracy)
        loc = run_federation(fed, FederationConfig(master_seed=seed, eval_mode="local"), tcfg)
        rows["fedrouter (local)"].append(loc.report.final.accuracy)
        rows["fedavg"].append(run_fedavg(fed, FederationConfig(master_seed=seed), tcfg).report.final.accuracy)
        rows["local"].append(run_local_only(fed, FederationConfig(master_seed=seed), tcfg).report.final.accuracy)
    for name, acc in rows.items():
        print(f"{name:>20}  {np.mean(acc):.4f} +/- {np.std(acc, ddof=1) if len(acc) > 1 else float('nan'):.4f}")
    print(f"global-mode routing accuracy {np.mean(routing):.4f}")


if __name__ == "__main__":
    main()
