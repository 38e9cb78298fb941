"""K-Means (k-means++ seeding, Lloyd iterations), nearest-centroid lookup and
silhouette-based selection of the cluster count."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from fedrouter.seeding import derive_seed

MAX_ITERS = 100
N_INIT = 10
# relative slack when checking that inertia never goes up between iterations
_MONOTONE_RTOL = 1e-9


@dataclass
class CentroidSet:
    centroids: np.ndarray  # (k, E)
    assignments: np.ndarray  # (n,) cluster index per input row
    inertia: float
    history: list[float] = field(default_factory=list)  # inertia after each Lloyd update

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    def recomputed_inertia(self, points) -> float:
        points = np.asarray(points, dtype=float)
        return float(((points - self.centroids[self.assignments]) ** 2).sum())


def _as_points(points) -> np.ndarray:
    try:
        arr = np.asarray(points, dtype=float)
    except ValueError:
        raise ValueError("all points must share one dimension") from None
    if arr.ndim != 2:
        raise ValueError("points must form an (n, E) array with a shared dimension")
    if arr.shape[0] == 0:
        raise ValueError("no points to cluster")
    return arr


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _kmeans_pp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    closest = ((points - points[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            # every point already coincides with a center
            remaining = np.setdiff1d(np.arange(n), chosen)
            idx = int(rng.choice(remaining))
        chosen.append(idx)
        closest = np.minimum(closest, ((points - points[idx]) ** 2).sum(axis=1))
    return points[chosen].copy()


def _repair_empty(labels: np.ndarray, sq: np.ndarray, k: int) -> np.ndarray:
    """Give each empty cluster the point farthest from its own centroid.

    Donors must come from clusters with at least two members, so no new empty
    cluster appears and the cost can only drop.
    """
    labels = labels.copy()
    for c in range(k):
        if np.any(labels == c):
            continue
        counts = np.bincount(labels, minlength=k)
        own = sq[np.arange(len(labels)), labels]
        own = np.where(counts[labels] > 1, own, -np.inf)
        labels[int(np.argmax(own))] = c
    return labels


def _lloyd(points: np.ndarray, init: np.ndarray, max_iters: int) -> CentroidSet:
    k = init.shape[0]
    centroids = init
    labels = None
    history: list[float] = []
    for _ in range(max_iters):
        sq = _sq_dists(points, centroids)
        new = _repair_empty(np.argmin(sq, axis=1), sq, k)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        centroids = np.stack([points[labels == c].mean(axis=0) for c in range(k)])
        inertia = float(((points - centroids[labels]) ** 2).sum())
        if history and inertia > history[-1] * (1 + _MONOTONE_RTOL) + 1e-12:
            raise RuntimeError(f"Lloyd inertia increased: {history[-1]} -> {inertia}")
        history.append(inertia)
    return CentroidSet(centroids, labels, history[-1], history)


def kmeans_fit(points, k: int, seed: int, *, n_init: int = N_INIT, max_iters: int = MAX_ITERS) -> CentroidSet:
    """Best of ``n_init`` seeded k-means++/Lloyd runs (lowest inertia, earliest on ties)."""
    pts = _as_points(points)
    if not 1 <= k <= pts.shape[0]:
        raise ValueError(f"k={k} must lie in [1, {pts.shape[0]}]")
    best = None
    for i in range(n_init):
        rng = np.random.default_rng(derive_seed(seed, i))
        fit = _lloyd(pts, _kmeans_pp(pts, k, rng), max_iters)
        if best is None or fit.inertia < best.inertia:
            best = fit
    return best


def assign_nearest(point, centroids) -> tuple[int, float]:
    centroids = np.atleast_2d(np.asarray(centroids, dtype=float))
    point = np.asarray(point, dtype=float)
    if centroids.size == 0:
        raise ValueError("empty centroid list")
    if point.shape != (centroids.shape[1],):
        raise ValueError(f"point dimension {point.shape} does not match centroids {centroids.shape[1]}")
    dists = np.linalg.norm(centroids - point, axis=1)
    idx = int(np.argmin(dists))  # first minimum wins ties
    return idx, float(dists[idx])


def assign_all(points, centroids) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise :func:`assign_nearest`; returns ``(indices, distances)``."""
    points = _as_points(points)
    centroids = np.atleast_2d(np.asarray(centroids, dtype=float))
    if centroids.size == 0:
        raise ValueError("empty centroid list")
    if points.shape[1] != centroids.shape[1]:
        raise ValueError("dimension mismatch between points and centroids")
    dists = np.linalg.norm(points[:, None, :] - centroids[None, :, :], axis=2)
    idx = np.argmin(dists, axis=1)
    return idx, dists[np.arange(len(idx)), idx]


def silhouette_score(points, assignments) -> float:
    pts = _as_points(points)
    labels = np.asarray(assignments)
    if labels.shape != (pts.shape[0],):
        raise ValueError("one assignment per point required")
    clusters = np.unique(labels)
    if clusters.size < 2:
        raise ValueError("silhouette needs at least 2 clusters")
    dist = np.sqrt(np.maximum(_sq_dists(pts, pts), 0.0))
    member = labels[:, None] == clusters[None, :]  # (n, c)
    sizes = member.sum(axis=0)
    sums = dist @ member  # distance mass from each point to each cluster
    own = np.argmax(member, axis=1)
    n = pts.shape[0]
    own_size = sizes[own]
    a = np.where(own_size > 1, sums[np.arange(n), own] / np.maximum(own_size - 1, 1), 0.0)
    means = sums / sizes
    means[np.arange(n), own] = np.inf
    b = means.min(axis=1)
    denom = np.maximum(a, b)
    s = np.where((own_size > 1) & (denom > 0), (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    return float(s.mean())


def select_k_silhouette(points, k_min: int, k_max: int, seed: int) -> tuple[int, dict[int, float]]:
    """Fit every k in ``[k_min, k_max]`` and keep the highest silhouette (smaller k on ties)."""
    pts = _as_points(points)
    if not 2 <= k_min <= k_max <= pts.shape[0] - 1:
        raise ValueError(
            f"need 2 <= k_min <= k_max <= n-1, got k_min={k_min}, k_max={k_max}, n={pts.shape[0]}"
        )
    scores = {}
    for k in range(k_min, k_max + 1):
        fit = kmeans_fit(pts, k, seed)
        if np.unique(fit.assignments).size < 2:
            scores[k] = -1.0
        else:
            scores[k] = silhouette_score(pts, fit.assignments)
    best = max(scores, key=lambda k: (scores[k], -k))
    return best, scores
