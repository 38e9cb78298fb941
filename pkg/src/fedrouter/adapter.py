"""Per-task adapter: a multinomial linear classifier over embeddings.

Stands in for a LoRA adapter. What matters to the protocol is that the
parameters are trained locally with mini-batch SGD and can be averaged
elementwise on the server.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np


@dataclass
class AdapterParams:
    weights: np.ndarray  # (class_count, E)
    bias: np.ndarray  # (class_count,)
    adapter_id: int = 0
    steps_trained: int = 0

    @property
    def class_count(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def copy(self) -> "AdapterParams":
        return AdapterParams(self.weights.copy(), self.bias.copy(), self.adapter_id, self.steps_trained)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.weights).tobytes())
        h.update(np.ascontiguousarray(self.bias).tobytes())
        return h.hexdigest()

    def flat(self) -> np.ndarray:
        return np.concatenate([self.weights.ravel(), self.bias])


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.005
    steps_per_round: int = 10
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.steps_per_round < 1 or self.batch_size < 1:
            raise ValueError("steps_per_round and batch_size must be positive")

    def with_seed(self, seed: int) -> "TrainConfig":
        return replace(self, seed=seed)


def init_adapter(dim: int, class_count: int, adapter_id: int = 0, seed: int | None = None) -> AdapterParams:
    """Zero-initialized adapter. ``seed`` is accepted for interface symmetry and ignored."""
    if dim < 1 or class_count < 1:
        raise ValueError("dim and class_count must be >= 1")
    return AdapterParams(np.zeros((class_count, dim)), np.zeros(class_count), adapter_id, 0)


def _check_dim(adapter: AdapterParams, x: np.ndarray) -> None:
    if x.shape[-1] != adapter.dim:
        raise ValueError(f"embedding dimension {x.shape[-1]} does not match adapter dimension {adapter.dim}")


def logits(adapter: AdapterParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    _check_dim(adapter, x)
    return x @ adapter.weights.T + adapter.bias


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def predict(adapter: AdapterParams, embedding) -> np.ndarray:
    """Class probabilities for one embedding (or a batch of them)."""
    return softmax(logits(adapter, embedding))


def nll(z: np.ndarray, y: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return np.log(np.exp(z).sum(axis=1)) - z[np.arange(len(y)), y]


def loss_and_grad(adapter: AdapterParams, x: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. ``(weights, bias)``."""
    z = logits(adapter, x)
    p = softmax(z)
    p[np.arange(len(y)), y] -= 1.0
    p /= len(y)
    return float(nll(z, y).mean()), p.T @ x, p.sum(axis=0)


def batch_indices(n: int, steps: int, batch_size: int, rng: np.random.Generator):
    """Yield ``steps`` batches from successive random permutations of ``range(n)``.

    A batch that runs off the end of one permutation wraps into the next.
    """
    order = rng.permutation(n)
    pos = 0
    for _ in range(steps):
        batch = []
        while len(batch) < batch_size:
            if pos == n:
                order = rng.permutation(n)
                pos = 0
            take = min(batch_size - len(batch), n - pos)
            batch.extend(order[pos : pos + take])
            pos += take
        yield np.asarray(batch, dtype=np.int64)


def train_sgd(
    adapter: AdapterParams,
    x,
    y,
    cfg: TrainConfig,
    on_batch: Callable[[np.ndarray], None] | None = None,
) -> AdapterParams:
    """Run ``cfg.steps_per_round`` cross-entropy SGD steps; returns an updated copy.

    ``on_batch`` receives the row indices of each mini-batch (used for tracing).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("training data is empty")
    _check_dim(adapter, x)
    if y.shape != (x.shape[0],):
        raise ValueError("one label per row required")
    if y.min() < 0 or y.max() >= adapter.class_count:
        raise ValueError(f"labels must lie in [0, {adapter.class_count})")

    out = adapter.copy()
    rng = np.random.default_rng(cfg.seed)
    for idx in batch_indices(x.shape[0], cfg.steps_per_round, cfg.batch_size, rng):
        if on_batch is not None:
            on_batch(idx)
        _, gw, gb = loss_and_grad(out, x[idx], y[idx])
        out.weights -= cfg.learning_rate * gw
        out.bias -= cfg.learning_rate * gb
        if not (np.isfinite(out.weights).all() and np.isfinite(out.bias).all()):
            raise FloatingPointError("adapter parameters diverged to a non-finite value")
    out.steps_trained += cfg.steps_per_round
    return out


def average_adapters(adapters: Sequence[AdapterParams], weights: Sequence[float] | None = None) -> AdapterParams:
    if not adapters:
        raise ValueError("nothing to average")
    shape_w, shape_b = adapters[0].weights.shape, adapters[0].bias.shape
    for a in adapters[1:]:
        if a.weights.shape != shape_w or a.bias.shape != shape_b:
            raise ValueError("adapter shapes differ")
    if weights is None:
        coef = np.full(len(adapters), 1.0 / len(adapters))
    else:
        coef = np.asarray(weights, dtype=float)
        if coef.shape != (len(adapters),):
            raise ValueError("one weight per adapter required")
        if np.any(coef < 0) or abs(coef.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be non-negative and sum to 1")
    w = np.zeros(shape_w)
    b = np.zeros(shape_b)
    for c, a in zip(coef, adapters):
        w += c * a.weights
        b += c * a.bias
    return AdapterParams(w, b, adapters[0].adapter_id, max(a.steps_trained for a in adapters))


def evaluate(adapter: AdapterParams, x, y) -> tuple[float, float]:
    """Accuracy and mean cross-entropy on ``(x, y)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("evaluation data is empty")
    z = logits(adapter, x)
    return float(np.mean(z.argmax(axis=1) == y)), float(nll(z, y).mean())


def save_adapter_csv(adapter: AdapterParams, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("adapter_id,steps_trained\n")
        fh.write(f"{adapter.adapter_id},{adapter.steps_trained}\n")
        fh.write(",".join(repr(float(v)) for v in adapter.weights.ravel()) + "\n")
        fh.write(",".join(repr(float(v)) for v in adapter.bias) + "\n")


def load_adapter_csv(path: str | Path) -> AdapterParams:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if len(lines) != 4 or lines[0] != "adapter_id,steps_trained":
        raise ValueError(f"{path}: not an adapter checkpoint")
    adapter_id, steps = (int(v) for v in lines[1].split(","))
    w = np.array([float(v) for v in lines[2].split(",")])
    b = np.array([float(v) for v in lines[3].split(",")])
    if w.size % b.size:
        raise ValueError(f"{path}: weight count not a multiple of class count")
    return AdapterParams(w.reshape(b.size, -1), b, adapter_id, steps)
