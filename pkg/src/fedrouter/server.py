"""Server side of the protocol and the end-to-end federation loop.

The server clusters the pooled client centroids once, keeps one aggregated
adapter per global cluster, and each round hands every client one of its
matched clusters in round-robin order (standard mode) or all of them (star
mode). Updates for a cluster are averaged; clusters nobody trained keep
their previous adapter.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from fedrouter.adapter import AdapterParams, TrainConfig, average_adapters
from fedrouter.client import Assignment, Client, ClientReport, TrainResult, choose_local_k
from fedrouter.clustering import CentroidSet, kmeans_fit, select_k_silhouette
from fedrouter.datagen import Federation
from fedrouter.metrics import EvalTally, MetricsReport, RoundRecord, TraceRow
from fedrouter.router import batch_evaluate
from fedrouter.seeding import TAG_GLOBAL_CLUSTER, TAG_LOCAL_CLUSTER, derive_seed, train_seed

log = logging.getLogger(__name__)

MODES = ("standard", "star")
AGGREGATIONS = ("uniform", "sample_weighted")
AUTO_K_MAX = 8


@dataclass(frozen=True)
class FederationConfig:
    n_clients: int = 8
    rounds: int = 25
    n_g: int | str = 4  # or "auto"
    mode: str = "standard"
    aggregation: str = "uniform"
    master_seed: int = 0
    # local cluster count: None -> the client's true task count, an int, or "auto"
    n_l: int | str | None = None
    eval_mode: str = "local"

    def __post_init__(self):
        if self.n_clients < 1 or self.rounds < 0:
            raise ValueError("need n_clients >= 1 and rounds >= 0")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"aggregation must be one of {AGGREGATIONS}")
        if self.n_g != "auto" and (not isinstance(self.n_g, int) or self.n_g < 1):
            raise ValueError("n_g must be a positive integer or 'auto'")
        if self.eval_mode not in ("local", "global"):
            raise ValueError("eval_mode must be 'local' or 'global'")


@dataclass
class GlobalClusterModel:
    global_centroids: CentroidSet
    membership: dict[int, list[tuple[int, int]]]  # cluster -> [(client_id, local index)]
    adapters: dict[int, AdapterParams]
    local_to_global: dict[int, list[int]]  # client_id -> cluster of each local index

    @property
    def n_g(self) -> int:
        return self.global_centroids.k

    def matched_clusters(self, client_id: int) -> list[int]:
        return sorted(set(self.local_to_global[client_id]))

    def with_adapters(self, adapters: dict[int, AdapterParams]) -> "GlobalClusterModel":
        return GlobalClusterModel(self.global_centroids, self.membership, adapters, self.local_to_global)


@dataclass
class RoundPlan:
    round: int
    assignments: list[Assignment]


def _auto_range(n_points: int) -> tuple[int, int]:
    return 2, min(AUTO_K_MAX, n_points - 1)


def server_setup(reports: list[ClientReport], cfg: FederationConfig) -> GlobalClusterModel:
    if not reports:
        raise ValueError("no client reports")
    reports = sorted(reports, key=lambda r: r.client_id)
    owners = [(r.client_id, j) for r in reports for j in range(len(r.centroids))]
    pooled = np.stack([c for r in reports for c in r.centroids])
    seed = derive_seed(cfg.master_seed, TAG_GLOBAL_CLUSTER)

    n_g = cfg.n_g
    if n_g == "auto":
        k_min, k_max = _auto_range(len(pooled))
        n_g = select_k_silhouette(pooled, k_min, k_max, seed)[0] if k_max >= k_min else 1
        log.info("auto-selected n_g=%d over %d centroids", n_g, len(pooled))
    if n_g > len(pooled):
        raise ValueError(f"n_g={n_g} exceeds the {len(pooled)} reported centroids")

    fit = kmeans_fit(pooled, n_g, seed)
    membership = {g: [] for g in range(n_g)}
    local_to_global = {r.client_id: [0] * len(r.centroids) for r in reports}
    reported = {g: [] for g in range(n_g)}
    by_owner = {(r.client_id, j): a for r in reports for j, a in enumerate(r.adapters)}
    for (cid, j), g in zip(owners, fit.assignments):
        g = int(g)
        membership[g].append((cid, j))
        local_to_global[cid][j] = g
        reported[g].append(by_owner[(cid, j)])
    adapters = {}
    for g in range(n_g):
        avg = average_adapters(reported[g])
        avg.adapter_id = g
        adapters[g] = avg
    return GlobalClusterModel(fit, membership, adapters, local_to_global)


def plan_round(model: GlobalClusterModel, round_idx: int, cfg: FederationConfig) -> RoundPlan:
    assignments = []
    for cid in sorted(model.local_to_global):
        matched = model.matched_clusters(cid)
        if not matched:
            raise RuntimeError(f"client {cid} has no matched global cluster")
        picked = matched if cfg.mode == "star" else [matched[round_idx % len(matched)]]
        for slot, g in enumerate(picked):
            assignments.append(
                Assignment(cid, g, model.global_centroids.centroids[g].copy(), model.adapters[g].copy(), slot)
            )
    return RoundPlan(round_idx, assignments)


def aggregate_updates(
    current: dict[int, AdapterParams], results: list[TrainResult], aggregation: str
) -> dict[int, AdapterParams]:
    grouped: dict[int, list[TrainResult]] = {}
    for r in sorted(results, key=lambda r: (r.client_id, r.global_cluster)):
        if r.global_cluster not in current:
            raise KeyError(f"unknown global cluster {r.global_cluster}")
        grouped.setdefault(r.global_cluster, []).append(r)
    out = dict(current)
    for g, rs in grouped.items():
        weights = None
        total = sum(r.sample_count for r in rs)
        if aggregation == "sample_weighted" and total > 0:
            weights = [r.sample_count / total for r in rs]
            # guard the sum-to-one check against float drift
            weights[-1] = 1.0 - sum(weights[:-1])
        avg = average_adapters([r.adapter for r in rs], weights)
        avg.adapter_id = g
        out[g] = avg
    return out


def aggregate_round(model: GlobalClusterModel, results: list[TrainResult], cfg: FederationConfig) -> GlobalClusterModel:
    return model.with_adapters(aggregate_updates(model.adapters, results, cfg.aggregation))


def resolve_local_k(fed: Federation, client_id: int, n_l, seed: int) -> int:
    if n_l is None:
        return len(fed.task_sets[client_id])
    if n_l == "auto":
        # silhouette cannot pick a single cluster; single-task clients keep one
        if fed.config.scenario == "single":
            return 1
        return choose_local_k(fed.train[client_id], seed)
    return int(n_l)


def setup_clients(fed: Federation, cfg: FederationConfig) -> list[Client]:
    clients = []
    for i, data in enumerate(fed.train):
        seed = derive_seed(cfg.master_seed, TAG_LOCAL_CLUSTER, i)
        n_l = cfg.n_l[i] if isinstance(cfg.n_l, (list, tuple)) else cfg.n_l
        clients.append(Client(data, fed.class_count).setup(resolve_local_k(fed, i, n_l, seed), seed))
    return clients


def cluster_majority_tasks(model: GlobalClusterModel, clients: list[Client]) -> dict[int, int]:
    """Majority ground-truth task over all training rows of each global cluster. Evaluation only."""
    by_id = {c.client_id: c for c in clients}
    out = {}
    for g, members in model.membership.items():
        tasks = [by_id[cid].train_data.task_ids[by_id[cid].shard_index[j]] for cid, j in members]
        counts = np.bincount(np.concatenate(tasks)) if tasks else np.zeros(1, dtype=int)
        out[g] = int(counts.argmax()) if counts.sum() else -1
    return out


def evaluate_model(fed: Federation, clients: list[Client], model: GlobalClusterModel, mode: str, cluster_task=None) -> EvalTally:
    tally = EvalTally()
    for c in clients:
        part = batch_evaluate(fed.test[c.client_id], mode, c.local_centroids, model, c.client_id, cluster_task)
        tally = tally.merge(part)
    return tally


@dataclass
class FederationRun:
    model: GlobalClusterModel
    report: MetricsReport
    trace: list[TraceRow]
    clients: list[Client]
    initial_model: GlobalClusterModel
    cluster_task: dict[int, int] = field(default_factory=dict)


def run_federation(
    fed: Federation,
    cfg: FederationConfig,
    train_cfg: TrainConfig,
    method: str = "fedrouter",
) -> FederationRun:
    if cfg.n_clients != fed.n_clients:
        raise ValueError(f"config has {cfg.n_clients} clients, dataset has {fed.n_clients}")
    clients = setup_clients(fed, cfg)
    model = server_setup([c.first_round_report() for c in clients], cfg)
    initial = model
    cluster_task = cluster_majority_tasks(model, clients)
    report = MetricsReport(method, fed.config.scenario, cfg.master_seed)
    trace = []
    for t in range(cfg.rounds):
        plan = plan_round(model, t, cfg)
        results = []
        for a in plan.assignments:
            seed = train_seed(cfg.master_seed, a.client_id, t, a.slot)
            res = clients[a.client_id].train_assignment(a, train_cfg.with_seed(seed))
            results.append(res)
            trace.append(TraceRow(t, a.client_id, a.global_cluster, cfg.mode, res.sample_count))
        model = aggregate_round(model, results, cfg)
        tally = evaluate_model(fed, clients, model, cfg.eval_mode, cluster_task)
        report.records.append(RoundRecord.from_tally(t, tally))
    return FederationRun(model, report, trace, clients, initial, cluster_task)
