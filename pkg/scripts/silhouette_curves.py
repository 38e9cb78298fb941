"""Print silhouette score against k for both scopes in every scenario.

    python3 scripts/silhouette_curves.py --seeds 1,2,3 --k-max 8
"""

import argparse

from fedrouter.datagen import ScenarioConfig, build_scenario
from fedrouter.harness import silhouette_report


def main():
    p = argparse.ArgumentParser(description="silhouette curves")
    p.add_argument("--seeds", default="1,2,3,4,5")
    p.add_argument("--k-max", type=int, default=8)
    args = p.parse_args()
    for scope in ("global", "local"):
        for scenario in ("single", "dual", "all"):
            for seed in (int(s) for s in args.seeds.split(",")):
                table = silhouette_report(build_scenario(ScenarioConfig(scenario=scenario, master_seed=seed)), scope, (2, args.k_max))
                if table is None:
                    print(f"{scope:>6} {scenario:>6}: skipped, one task per client")
                    break
                curve = " ".join(f"{k}:{m:.3f}" for k, m in zip(table.k_values, table.mean))
                print(f"{scope:>6} {scenario:>6} seed {seed}  argmax {table.argmax}  {curve}")


if __name__ == "__main__":
    main()
