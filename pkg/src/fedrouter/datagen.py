"""Synthetic multi-task embedding datasets and the embedding CSV format.

Each task is a Gaussian blob around its own center, split into classes by
per-class offsets. Task centers sit on a random orthonormal frame scaled so
that every pair is exactly ``separation`` apart; class offsets live in the
orthogonal complement of the centers.

With ``conflict=True`` every task shares one set of offset regions, and tasks
in different conflict groups read those regions under cyclically shifted
labels. No single linear classifier can then be right on two groups at once.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from fedrouter.seeding import TAG_TASKS, TAG_TEST_DATA, TAG_TRAIN_DATA, derive_seed, make_rng

SCENARIOS = ("single", "dual", "all")


@dataclass
class TaskSpec:
    task_id: int
    center: np.ndarray
    class_count: int
    class_offsets: np.ndarray  # (class_count, E); row c is where label c lives
    noise_sigma: float
    conflict_group: int

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        self.class_offsets = np.atleast_2d(np.asarray(self.class_offsets, dtype=float))
        if self.task_id < 0:
            raise ValueError("task_id must be >= 0")
        if self.class_count < 2:
            raise ValueError("class_count must be >= 2")
        if self.class_offsets.shape[0] != self.class_count:
            raise ValueError(
                f"expected {self.class_count} class offsets, got {self.class_offsets.shape[0]}"
            )
        if self.class_offsets.shape[1] != self.center.shape[0]:
            raise ValueError("class offset dimension does not match center dimension")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")

    @property
    def dim(self) -> int:
        return self.center.shape[0]


@dataclass
class EmbeddingMatrix:
    """Per-client sample embeddings with ground-truth task and class labels.

    ``task_ids`` exist for evaluation only; the protocol never reads them.
    """

    client_id: int
    embeddings: np.ndarray
    task_ids: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=float)
        self.task_ids = np.asarray(self.task_ids, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.embeddings.ndim != 2 or self.embeddings.shape[0] == 0:
            raise ValueError("embeddings must be a non-empty 2-D array")
        n = self.embeddings.shape[0]
        if self.task_ids.shape != (n,) or self.labels.shape != (n,):
            raise ValueError("task_ids and labels must have one entry per row")

    def __len__(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def subset(self, rows: np.ndarray) -> "EmbeddingMatrix":
        rows = np.asarray(rows, dtype=np.int64)
        return EmbeddingMatrix(
            self.client_id, self.embeddings[rows], self.task_ids[rows], self.labels[rows]
        )

    def equals(self, other: "EmbeddingMatrix") -> bool:
        return (
            self.client_id == other.client_id
            and np.array_equal(self.embeddings, other.embeddings)
            and np.array_equal(self.task_ids, other.task_ids)
            and np.array_equal(self.labels, other.labels)
        )


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str = "single"
    n_clients: int = 8
    n_tasks: int = 4
    train_per_client: int = 600
    test_per_client: int = 300
    dim: int = 32
    separation: float = 10.0
    conflict: bool = False
    master_seed: int = 0
    class_count: int = 4
    noise_sigma: float = 1.0
    class_scale: float = 3.0
    conflict_groups: int = 2
    # draw test rows from every task instead of the client's own (test-time shift)
    test_all_tasks: bool = False

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        for name in ("n_clients", "n_tasks", "train_per_client", "test_per_client", "dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.separation <= 0 or self.noise_sigma <= 0:
            raise ValueError("separation and noise_sigma must be positive")
        if self.class_count < 2:
            raise ValueError("class_count must be >= 2")
        if self.scenario == "dual" and self.n_tasks < 2:
            raise ValueError("dual scenario needs at least 2 tasks")
        if not 1 <= self.conflict_groups <= self.n_tasks:
            raise ValueError("conflict_groups must be in [1, n_tasks]")

    @property
    def tasks_per_client(self) -> int:
        return {"single": 1, "dual": 2, "all": self.n_tasks}[self.scenario]


@dataclass
class Federation:
    config: ScenarioConfig
    tasks: list[TaskSpec]
    task_sets: list[tuple[int, ...]]
    train: list[EmbeddingMatrix]
    test: list[EmbeddingMatrix]

    @property
    def n_clients(self) -> int:
        return len(self.train)

    @property
    def class_count(self) -> int:
        return self.tasks[0].class_count


def generate_task(spec: TaskSpec, n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Sample ``n`` rows of ``spec``; returns ``(embeddings, labels)``."""
    if n <= 0:
        raise ValueError(f"n must be positive, got {n}")
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, spec.class_count, size=n)
    noise = rng.standard_normal((n, spec.dim)) * spec.noise_sigma
    x = spec.center[None, :] + spec.class_offsets[labels] + noise
    return x, labels.astype(np.int64)


def make_task_specs(
    n_tasks: int,
    dim: int,
    *,
    separation: float = 10.0,
    class_count: int = 4,
    class_scale: float = 3.0,
    noise_sigma: float = 1.0,
    conflict: bool = False,
    conflict_groups: int = 2,
    seed: int = 0,
) -> list[TaskSpec]:
    if dim < n_tasks + 1:
        raise ValueError(f"dim={dim} too small for {n_tasks} orthogonal task centers")
    rng = np.random.default_rng(seed)
    frame, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    centers = frame[:, :n_tasks].T * (separation / np.sqrt(2.0))
    complement = frame[:, n_tasks:]

    def offsets() -> np.ndarray:
        raw = rng.standard_normal((class_count, complement.shape[1])) @ complement.T
        return class_scale * raw / np.linalg.norm(raw, axis=1, keepdims=True)

    specs = []
    if conflict:
        shared = offsets()
        step = max(1, class_count // conflict_groups)
        for t in range(n_tasks):
            group = t % conflict_groups
            # label c sits in region (c + shift) of the shared layout
            order = (np.arange(class_count) + group * step) % class_count
            specs.append(TaskSpec(t, centers[t], class_count, shared[order], noise_sigma, group))
    else:
        for t in range(n_tasks):
            specs.append(TaskSpec(t, centers[t], class_count, offsets(), noise_sigma, t))

    for a, b in itertools.combinations(specs, 2):
        if np.linalg.norm(a.center - b.center) < separation * (1 - 1e-9):
            raise AssertionError("task centers closer than the requested separation")
    return specs


def scenario_task_sets(scenario: str, n_clients: int, n_tasks: int) -> list[tuple[int, ...]]:
    """Task ids held by each client.

    Single and dual use a ring: clients come in consecutive blocks of
    ``n_clients / n_tasks``; block ``p`` holds tasks ``p, p+1, ...`` (mod
    ``n_tasks``). With 8 clients and 4 tasks, dual gives
    {0,1},{0,1},{1,2},{1,2},{2,3},{2,3},{3,0},{3,0}.
    """
    if scenario == "all":
        return [tuple(range(n_tasks))] * n_clients
    per_client = {"single": 1, "dual": 2}[scenario]
    if n_clients % n_tasks:
        raise ValueError(
            f"{n_clients} clients cannot tile {n_tasks} tasks evenly in the {scenario} scenario"
        )
    block = n_clients // n_tasks
    sets = []
    for i in range(n_clients):
        p = i // block
        sets.append(tuple(sorted((p + j) % n_tasks for j in range(per_client))))
    return sets


def _draw_rows(tasks, task_ids, total, seed_keys, client_id) -> EmbeddingMatrix:
    if total % len(task_ids):
        raise ValueError(f"{total} rows cannot be split evenly over {len(task_ids)} tasks")
    per_task = total // len(task_ids)
    xs, ys, ts = [], [], []
    for t in task_ids:
        x, y = generate_task(tasks[t], per_task, derive_seed(*seed_keys, t))
        xs.append(x)
        ys.append(y)
        ts.append(np.full(per_task, t, dtype=np.int64))
    order = make_rng(*seed_keys).permutation(total)
    return EmbeddingMatrix(
        client_id,
        np.concatenate(xs)[order],
        np.concatenate(ts)[order],
        np.concatenate(ys)[order],
    )


def build_scenario(cfg: ScenarioConfig) -> Federation:
    tasks = make_task_specs(
        cfg.n_tasks,
        cfg.dim,
        separation=cfg.separation,
        class_count=cfg.class_count,
        class_scale=cfg.class_scale,
        noise_sigma=cfg.noise_sigma,
        conflict=cfg.conflict,
        conflict_groups=cfg.conflict_groups,
        seed=derive_seed(cfg.master_seed, TAG_TASKS),
    )
    task_sets = scenario_task_sets(cfg.scenario, cfg.n_clients, cfg.n_tasks)
    everything = tuple(range(cfg.n_tasks))
    train, test = [], []
    for i, own in enumerate(task_sets):
        train.append(
            _draw_rows(tasks, own, cfg.train_per_client, (cfg.master_seed, TAG_TRAIN_DATA, i), i)
        )
        test_tasks = everything if cfg.test_all_tasks else own
        test.append(
            _draw_rows(tasks, test_tasks, cfg.test_per_client, (cfg.master_seed, TAG_TEST_DATA, i), i)
        )
    return Federation(cfg, tasks, task_sets, train, test)


# --- embedding CSV ---------------------------------------------------------


def export_embedding_csv(
    matrix: EmbeddingMatrix,
    path: str | Path,
    clusters: Sequence[int] | None = None,
    comment: str | None = None,
) -> None:
    """Write ``task_id,label[,cluster],e0,...`` rows; floats in repr form so they round-trip."""
    header = ["task_id", "label"]
    if clusters is not None:
        if len(clusters) != len(matrix):
            raise ValueError("one cluster index per row required")
        header.append("cluster")
    header += [f"e{j}" for j in range(matrix.dim)]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh, quoting=csv.QUOTE_NONE, lineterminator="\n")
        writer.writerow(header)
        for i in range(len(matrix)):
            row = [int(matrix.task_ids[i]), int(matrix.labels[i])]
            if clusters is not None:
                row.append(int(clusters[i]))
            row += [repr(float(v)) for v in matrix.embeddings[i]]
            writer.writerow(row)


def read_embedding_csv(path: str | Path, client_id: int = 0) -> tuple[EmbeddingMatrix, np.ndarray | None]:
    """Parse an embedding CSV. Returns the matrix and the cluster column if present.

    Lines starting with ``#`` are header comments and are skipped.
    """
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise ValueError(f"{path}: empty embedding file")
    header = lines[0].split(",")
    if header[:2] != ["task_id", "label"]:
        raise ValueError(f"{path}: header must start with task_id,label")
    has_cluster = len(header) > 2 and header[2] == "cluster"
    emb_cols = header[3:] if has_cluster else header[2:]
    if not emb_cols or emb_cols != [f"e{j}" for j in range(len(emb_cols))]:
        raise ValueError(f"{path}: embedding columns must be e0..e{{E-1}}")
    width = len(header)
    if len(lines) == 1:
        raise ValueError(f"{path}: no data rows")

    tasks, labels, clusters, rows = [], [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split(",")
        if len(fields) != width:
            raise ValueError(
                f"{path}:{lineno}: expected {width} fields, got {len(fields)} (dimension mismatch)"
            )
        try:
            tasks.append(int(fields[0]))
            labels.append(int(fields[1]))
            start = 2
            if has_cluster:
                clusters.append(int(fields[2]))
                start = 3
            rows.append([float(v) for v in fields[start:]])
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: non-numeric field ({exc})") from None
    matrix = EmbeddingMatrix(client_id, np.array(rows), np.array(tasks), np.array(labels))
    return matrix, (np.array(clusters, dtype=np.int64) if has_cluster else None)


def import_embeddings(path: str | Path, client_id: int = 0) -> EmbeddingMatrix:
    return read_embedding_csv(path, client_id)[0]
