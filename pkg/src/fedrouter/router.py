"""Evaluation router: send each test sample to the adapter of its nearest centroid.

Local mode searches the client's own centroids and resolves the adapter
through the frozen global membership; global mode searches every global
centroid. Samples are grouped by adapter so each adapter is applied once.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from fedrouter.adapter import nll, logits, predict
from fedrouter.clustering import assign_all, assign_nearest
from fedrouter.datagen import EmbeddingMatrix
from fedrouter.metrics import EvalTally

if TYPE_CHECKING:
    from fedrouter.server import GlobalClusterModel

MODES = ("local", "global")


@dataclass
class RoutingDecision:
    sample: int
    centroid_index: int  # local cluster index (local mode) or global cluster id (global mode)
    adapter_cluster: int  # global cluster whose adapter serves the sample
    distance: float


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


def _resolve(mode: str, local_centroids, model: "GlobalClusterModel", client_id: int):
    _check_mode(mode)
    if mode == "global":
        centroids = model.global_centroids.centroids
        to_adapter = list(range(len(centroids)))
    else:
        centroids = np.asarray(local_centroids, dtype=float)
        to_adapter = model.local_to_global[client_id]
    if len(centroids) == 0:
        raise ValueError("no centroids to route against")
    return centroids, to_adapter


def route(sample, mode: str, local_centroids, model: "GlobalClusterModel", client_id: int, index: int = 0) -> RoutingDecision:
    centroids, to_adapter = _resolve(mode, local_centroids, model, client_id)
    j, dist = assign_nearest(sample, centroids)
    return RoutingDecision(index, j, to_adapter[j], dist)


def route_all(data: EmbeddingMatrix, mode: str, local_centroids, model: "GlobalClusterModel", client_id: int) -> list[RoutingDecision]:
    centroids, to_adapter = _resolve(mode, local_centroids, model, client_id)
    idx, dist = assign_all(data.embeddings, centroids)
    return [RoutingDecision(i, int(j), to_adapter[j], float(d)) for i, (j, d) in enumerate(zip(idx, dist))]


def batch_evaluate(
    test_data: EmbeddingMatrix,
    mode: str,
    local_centroids,
    model: "GlobalClusterModel",
    client_id: int,
    cluster_task: dict[int, int] | None = None,
) -> EvalTally:
    """Route every sample, then evaluate each adapter group in a single pass.

    ``cluster_task`` maps a global cluster to the majority ground-truth task
    of its members; when given, routing accuracy is tallied against it.
    """
    if len(test_data) == 0:
        raise ValueError("no test samples")
    decisions = route_all(test_data, mode, local_centroids, model, client_id)
    chosen = np.array([d.adapter_cluster for d in decisions])
    tally = EvalTally()
    for g in np.unique(chosen):
        rows = np.flatnonzero(chosen == g)
        x, y, tasks = test_data.embeddings[rows], test_data.labels[rows], test_data.task_ids[rows]
        z = logits(model.adapters[int(g)], x)
        hit = z.argmax(axis=1) == y
        tally.activations += 1
        tally.n += rows.size
        tally.correct += int(hit.sum())
        tally.loss_sum += float(nll(z, y).sum())
        for t in np.unique(tasks):
            m = tasks == t
            tally.add_task(int(t), int(m.sum()), int(hit[m].sum()))
    if cluster_task is not None:
        expected = np.array([cluster_task.get(int(g), -1) for g in chosen])
        tally.routed = len(test_data)
        tally.routed_correct = int((expected == test_data.task_ids).sum())
    return tally


def per_sample_evaluate(
    test_data: EmbeddingMatrix,
    mode: str,
    local_centroids,
    model: "GlobalClusterModel",
    client_id: int,
    cluster_task: dict[int, int] | None = None,
) -> EvalTally:
    """Reference path: route and score one sample at a time, one adapter switch per sample."""
    tally = EvalTally()
    used = set()
    for i in range(len(test_data)):
        d = route(test_data.embeddings[i], mode, local_centroids, model, client_id, i)
        used.add(d.adapter_cluster)
        p = predict(model.adapters[d.adapter_cluster], test_data.embeddings[i])
        y, t = int(test_data.labels[i]), int(test_data.task_ids[i])
        hit = int(np.argmax(p) == y)
        tally.n += 1
        tally.correct += hit
        tally.loss_sum += float(-np.log(p[y]))
        tally.add_task(t, 1, hit)
        if cluster_task is not None:
            tally.routed += 1
            tally.routed_correct += int(cluster_task.get(d.adapter_cluster, -1) == t)
    tally.activations = len(used)
    return tally


def write_routing_dump(path, rows, comment: str | None = None) -> None:
    """Write ``sample,true_task,mode,chosen_cluster,distance,correct`` rows."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample", "true_task", "mode", "chosen_cluster", "distance", "correct"])
        w.writerows(rows)


def routing_rows(test_data: EmbeddingMatrix, mode: str, local_centroids, model, client_id: int, cluster_task: dict[int, int], offset: int = 0):
    out = []
    for d in route_all(test_data, mode, local_centroids, model, client_id):
        t = int(test_data.task_ids[d.sample])
        out.append(
            [offset + d.sample, t, mode, d.adapter_cluster, repr(d.distance), int(cluster_task.get(d.adapter_cluster, -1) == t)]
        )
    return out
