"""Evaluation tallies and per-round metric records."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class EvalTally:
    """Raw counts so results from several clients or adapter groups can be pooled exactly."""

    n: int = 0
    correct: int = 0
    loss_sum: float = 0.0
    task_n: dict[int, int] = field(default_factory=dict)
    task_correct: dict[int, int] = field(default_factory=dict)
    routed: int = 0  # samples with a routing verdict
    routed_correct: int = 0
    activations: int = 0

    def add_task(self, task: int, n: int, correct: int) -> None:
        self.task_n[task] = self.task_n.get(task, 0) + n
        self.task_correct[task] = self.task_correct.get(task, 0) + correct

    def merge(self, other: "EvalTally") -> "EvalTally":
        out = EvalTally(
            self.n + other.n,
            self.correct + other.correct,
            self.loss_sum + other.loss_sum,
            dict(self.task_n),
            dict(self.task_correct),
            self.routed + other.routed,
            self.routed_correct + other.routed_correct,
            self.activations + other.activations,
        )
        for t in other.task_n:
            out.add_task(t, other.task_n[t], other.task_correct[t])
        return out

    @property
    def accuracy(self) -> float:
        return self.correct / self.n if self.n else 0.0

    @property
    def loss(self) -> float:
        return self.loss_sum / self.n if self.n else 0.0

    @property
    def routing_accuracy(self) -> float | None:
        return self.routed_correct / self.routed if self.routed else None

    def per_task_accuracy(self) -> dict[int, float]:
        return {t: self.task_correct[t] / self.task_n[t] for t in sorted(self.task_n)}


@dataclass
class RoundRecord:
    round: int
    accuracy: float
    per_task_accuracy: dict[int, float]
    routing_accuracy: float | None
    loss: float

    @classmethod
    def from_tally(cls, round_idx: int, tally: EvalTally) -> "RoundRecord":
        return cls(round_idx, tally.accuracy, tally.per_task_accuracy(), tally.routing_accuracy, tally.loss)


@dataclass
class MetricsReport:
    method: str
    scenario: str
    seed: int
    records: list[RoundRecord] = field(default_factory=list)

    @property
    def final(self) -> RoundRecord | None:
        return self.records[-1] if self.records else None

    def as_dicts(self, **extra) -> list[dict]:
        rows = []
        for r in self.records:
            rows.append(
                {
                    "method": self.method,
                    "scenario": self.scenario,
                    "seed": self.seed,
                    **extra,
                    "round": r.round,
                    "accuracy": r.accuracy,
                    "per_task_accuracy": {str(t): v for t, v in r.per_task_accuracy.items()},
                    "routing_accuracy": r.routing_accuracy,
                    "loss": r.loss,
                }
            )
        return rows


@dataclass
class TraceRow:
    round: int
    client_id: int
    global_cluster: int
    mode: str
    samples: int
