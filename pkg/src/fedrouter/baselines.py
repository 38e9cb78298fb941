"""Comparison methods: FedAvg (one shared adapter), local-only training, and
FedCluster (clients grouped by their mean embedding, FedAvg within a group).

All of them draw training randomness from the same per-(client, round)
streams as the router-based runs, so a comparison differs only by method.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fedrouter.adapter import AdapterParams, TrainConfig, init_adapter, logits, nll, train_sgd
from fedrouter.clustering import kmeans_fit, select_k_silhouette
from fedrouter.datagen import Federation
from fedrouter.metrics import EvalTally, MetricsReport, RoundRecord, TraceRow
from fedrouter.client import TrainResult
from fedrouter.seeding import TAG_CLIENT_CLUSTER, derive_seed, train_seed
from fedrouter.server import AUTO_K_MAX, FederationConfig, aggregate_updates

KINDS = ("fedavg", "local", "fedcluster")


@dataclass
class BaselineRun:
    adapters: dict[int, AdapterParams]  # keyed by group (fedavg/fedcluster) or client (local)
    client_group: dict[int, int]  # client -> key into ``adapters``
    report: MetricsReport
    trace: list[TraceRow]


def _tally(fed: Federation, adapters: dict[int, AdapterParams], client_group: dict[int, int]) -> EvalTally:
    tally = EvalTally()
    for cid, test in enumerate(fed.test):
        z = logits(adapters[client_group[cid]], test.embeddings)
        hit = z.argmax(axis=1) == test.labels
        part = EvalTally(len(test), int(hit.sum()), float(nll(z, test.labels).sum()), activations=1)
        for t in np.unique(test.task_ids):
            m = test.task_ids == t
            part.add_task(int(t), int(m.sum()), int(hit[m].sum()))
        tally = tally.merge(part)
    return tally


def _run_grouped(
    fed: Federation,
    cfg: FederationConfig,
    train_cfg: TrainConfig,
    client_group: dict[int, int],
    method: str,
    communicate: bool = True,
) -> BaselineRun:
    dim, classes = fed.train[0].dim, fed.class_count
    adapters = {g: init_adapter(dim, classes, g) for g in sorted(set(client_group.values()))}
    report = MetricsReport(method, fed.config.scenario, cfg.master_seed)
    trace = []
    for t in range(cfg.rounds):
        results = []
        for cid, data in enumerate(fed.train):
            g = client_group[cid]
            seed = train_seed(cfg.master_seed, cid, t, 0)
            updated = train_sgd(adapters[g], data.embeddings, data.labels, train_cfg.with_seed(seed))
            results.append(TrainResult(cid, g, updated, len(data)))
            trace.append(TraceRow(t, cid, g, method, len(data)))
        if communicate:
            adapters = aggregate_updates(adapters, results, cfg.aggregation)
        else:
            adapters = {r.global_cluster: r.adapter for r in results}
        report.records.append(RoundRecord.from_tally(t, _tally(fed, adapters, client_group)))
    return BaselineRun(adapters, client_group, report, trace)


def run_fedavg(fed: Federation, cfg: FederationConfig, train_cfg: TrainConfig) -> BaselineRun:
    return _run_grouped(fed, cfg, train_cfg, {cid: 0 for cid in range(fed.n_clients)}, "fedavg")


def run_local_only(fed: Federation, cfg: FederationConfig, train_cfg: TrainConfig) -> BaselineRun:
    group = {cid: cid for cid in range(fed.n_clients)}
    return _run_grouped(fed, cfg, train_cfg, group, "local", communicate=False)


def client_groups(fed: Federation, cfg: FederationConfig) -> dict[int, int]:
    """Cluster clients by the mean of their training embeddings."""
    means = np.stack([d.embeddings.mean(axis=0) for d in fed.train])
    seed = derive_seed(cfg.master_seed, TAG_CLIENT_CLUSTER)
    n_g = cfg.n_g
    if n_g == "auto":
        k_max = min(AUTO_K_MAX, len(means) - 1)
        n_g = select_k_silhouette(means, 2, k_max, seed)[0] if k_max >= 2 else 1
    if n_g > len(means):
        raise ValueError(f"n_g={n_g} exceeds the number of clients ({len(means)})")
    fit = kmeans_fit(means, n_g, seed)
    return {cid: int(g) for cid, g in enumerate(fit.assignments)}


def run_fedcluster(fed: Federation, cfg: FederationConfig, train_cfg: TrainConfig) -> BaselineRun:
    return _run_grouped(fed, cfg, train_cfg, client_groups(fed, cfg), "fedcluster")
