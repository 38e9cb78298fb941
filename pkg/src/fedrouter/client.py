"""Client side of the protocol.

A client clusters its own embeddings once, reports one (centroid, adapter)
pair per local cluster, and afterwards trains whichever adapter the server
sends it on the local shard whose centroid is nearest to the received global
centroid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fedrouter.adapter import AdapterParams, TrainConfig, init_adapter, train_sgd
from fedrouter.clustering import CentroidSet, assign_nearest, kmeans_fit, select_k_silhouette
from fedrouter.datagen import EmbeddingMatrix


@dataclass
class ClientReport:
    client_id: int
    centroids: list[np.ndarray]
    adapters: list[AdapterParams]


@dataclass
class Assignment:
    client_id: int
    global_cluster: int
    centroid: np.ndarray
    adapter: AdapterParams
    slot: int = 0  # position among this client's assignments in the round


@dataclass
class TrainResult:
    client_id: int
    global_cluster: int
    adapter: AdapterParams
    sample_count: int


def choose_local_k(data: EmbeddingMatrix, seed: int, k_max: int = 8) -> int:
    """Silhouette-selected local cluster count over ``2..k_max``."""
    k_max = min(k_max, len(data) - 1)
    best, _ = select_k_silhouette(data.embeddings, 2, k_max, seed)
    return best


class Client:
    def __init__(self, data: EmbeddingMatrix, class_count: int):
        self.client_id = data.client_id
        self.train_data = data
        self.class_count = class_count
        self.local_clusters: CentroidSet | None = None
        self.shard_index: dict[int, np.ndarray] = {}
        self.adapters_seen: dict[int, AdapterParams] = {}

    def setup(self, n_l: int, seed: int) -> "Client":
        if self.local_clusters is not None:
            raise RuntimeError(f"client {self.client_id}: local clustering already done")
        if not 1 <= n_l <= len(self.train_data):
            raise ValueError(f"n_l={n_l} must lie in [1, {len(self.train_data)}]")
        self.local_clusters = kmeans_fit(self.train_data.embeddings, n_l, seed)
        labels = self.local_clusters.assignments
        self.shard_index = {j: np.flatnonzero(labels == j) for j in range(n_l)}
        return self

    def _require_setup(self) -> CentroidSet:
        if self.local_clusters is None:
            raise RuntimeError(f"client {self.client_id}: setup has not run")
        return self.local_clusters

    @property
    def local_centroids(self) -> np.ndarray:
        return self._require_setup().centroids

    def first_round_report(self) -> ClientReport:
        clusters = self._require_setup()
        dim = self.train_data.dim
        return ClientReport(
            self.client_id,
            [c.copy() for c in clusters.centroids],
            [init_adapter(dim, self.class_count, j) for j in range(clusters.k)],
        )

    def match_global_to_local(self, global_centroid) -> int:
        idx, _ = assign_nearest(global_centroid, self.local_centroids)
        return idx

    def train_assignment(self, assignment: Assignment, cfg: TrainConfig, on_batch=None) -> TrainResult:
        """Train the received adapter on the matched shard only.

        ``on_batch`` sees batch indices translated back to rows of the full
        local dataset.
        """
        shard = self.match_global_to_local(assignment.centroid)
        rows = self.shard_index[shard]
        self.adapters_seen[assignment.global_cluster] = assignment.adapter
        if rows.size == 0:
            return TrainResult(self.client_id, assignment.global_cluster, assignment.adapter.copy(), 0)
        hook = None if on_batch is None else (lambda idx: on_batch(rows[idx]))
        data = self.train_data
        updated = train_sgd(assignment.adapter, data.embeddings[rows], data.labels[rows], cfg, hook)
        return TrainResult(self.client_id, assignment.global_cluster, updated, int(rows.size))

    def shard_majority_tasks(self) -> list[int]:
        """Ground-truth majority task of each shard. Evaluation only."""
        self._require_setup()
        tasks = self.train_data.task_ids
        return [int(np.bincount(tasks[rows]).argmax()) if rows.size else -1 for rows in self.shard_index.values()]


def client_setup(data: EmbeddingMatrix, n_l: int, seed: int, class_count: int) -> Client:
    return Client(data, class_count).setup(n_l, seed)
