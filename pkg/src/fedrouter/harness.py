"""Experiment runner: config parsing, the (method x scenario x seed) grid,
artifact writing, silhouette tables and embedding export.

Every artifact starts with a ``# config_sha256=<hash> master_seed=<seed>``
line. Each grid cell writes its own directory as soon as it finishes; the
top-level ``metrics.jsonl``, ``trace.csv`` and ``summary.csv`` are written
once every cell is done, in grid order.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from fedrouter.adapter import TrainConfig
from fedrouter.baselines import run_fedavg, run_fedcluster, run_local_only
from fedrouter.clustering import assign_all, select_k_silhouette
from fedrouter.datagen import SCENARIOS, Federation, ScenarioConfig, build_scenario, export_embedding_csv
from fedrouter.router import routing_rows
from fedrouter.seeding import TAG_GLOBAL_CLUSTER, TAG_LOCAL_CLUSTER, derive_seed
from fedrouter.server import FederationConfig, run_federation, setup_clients

log = logging.getLogger(__name__)

METHODS = ("fedrouter", "fedrouter-star", "fedavg", "local", "fedcluster")
EVAL_MODES = ("local", "global")
TRACE_HEADER = ["method", "scenario", "seed", "round", "client_id", "global_cluster", "mode", "samples"]
SUMMARY_HEADER = ["method", "scenario", "eval_mode", "n_seeds", "mean", "std", "routing_mean", "routing_std"]

# keys the grid owns; they may not appear inside the nested sections
_GRID_OWNED = {
    "scenario": {"scenario", "master_seed"},
    "federation": {"mode", "master_seed", "eval_mode"},
    "train": {"seed"},
}


class ConfigError(ValueError):
    """Raised for malformed or inconsistent experiment configs."""


@dataclass(frozen=True)
class OutputOptions:
    routing_dump: bool = False
    trace: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    methods: tuple[str, ...] = ("fedrouter",)
    scenarios: tuple[str, ...] = ("all",)
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)
    eval_mode: str = "local"
    auto_k: bool = False
    scenario: dict = field(default_factory=dict)
    federation: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    outputs: OutputOptions = OutputOptions()
    jobs: int = 1

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for key in ("methods", "scenarios", "seeds"):
            d[key] = list(d[key])
        d.pop("jobs")  # execution detail; does not change any result
        return d

    @property
    def sha256(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def header(self, seed: int | str) -> str:
        return f"config_sha256={self.sha256} master_seed={seed}"

    def seeds_label(self) -> str:
        return ",".join(str(s) for s in self.seeds)

    # per-cell configs
    def scenario_config(self, scenario: str, seed: int) -> ScenarioConfig:
        return ScenarioConfig(scenario=scenario, master_seed=seed, **self.scenario)

    def federation_config(self, method: str, seed: int) -> FederationConfig:
        kw = dict(self.federation)
        if self.auto_k:
            kw["n_g"] = "auto"
            if method.startswith("fedrouter"):
                kw["n_l"] = "auto"
        mode = "star" if method == "fedrouter-star" else "standard"
        return FederationConfig(master_seed=seed, mode=mode, eval_mode=self.eval_mode, **kw)

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.train)


def _check_keys(section: str, given: dict, allowed: set[str]) -> None:
    if not isinstance(given, dict):
        raise ConfigError(f"{section!r} must be an object")
    unknown = set(given) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {section!r}: {sorted(unknown)}")


def _field_names(cls) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)}


def _as_tuple(value, name: str) -> tuple:
    if isinstance(value, (str, int)):
        value = [value]
    if not isinstance(value, list) or not value:
        raise ConfigError(f"{name!r} must be a non-empty list")
    return tuple(value)


def parse_config(raw: dict) -> ExperimentConfig:
    """Validate a decoded JSON config. Unknown keys anywhere are errors."""
    _check_keys("<top level>", raw, _field_names(ExperimentConfig))
    methods = _as_tuple(raw.get("methods", ["fedrouter"]), "methods")
    scenarios = _as_tuple(raw.get("scenarios", ["all"]), "scenarios")
    seeds = _as_tuple(raw.get("seeds", [1, 2, 3, 4, 5]), "seeds")
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}; choose from {METHODS}")
    for s in scenarios:
        if s not in SCENARIOS:
            raise ConfigError(f"unknown scenario {s!r}; choose from {SCENARIOS}")
    if not all(isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in seeds):
        raise ConfigError("seeds must be non-negative integers")
    if len(set(seeds)) != len(seeds) or len(set(methods)) != len(methods) or len(set(scenarios)) != len(scenarios):
        raise ConfigError("methods, scenarios and seeds must not repeat")
    eval_mode = raw.get("eval_mode", "local")
    if eval_mode not in EVAL_MODES:
        raise ConfigError(f"eval_mode must be one of {EVAL_MODES}")
    auto_k = raw.get("auto_k", False)
    jobs = raw.get("jobs", 1)
    if not isinstance(auto_k, bool) or not isinstance(jobs, int) or jobs < 1:
        raise ConfigError("auto_k must be a boolean and jobs a positive integer")

    sections = {}
    for name, cls in (("scenario", ScenarioConfig), ("federation", FederationConfig), ("train", TrainConfig)):
        given = raw.get(name, {})
        _check_keys(name, given, _field_names(cls) - _GRID_OWNED[name])
        sections[name] = dict(given)
    outputs = raw.get("outputs", {})
    _check_keys("outputs", outputs, _field_names(OutputOptions))

    cfg = ExperimentConfig(
        methods, scenarios, seeds, eval_mode, auto_k,
        sections["scenario"], sections["federation"], sections["train"],
        OutputOptions(**outputs), jobs,
    )
    # build every per-cell config once so value errors surface before any write
    try:
        cfg.train_config()
        for scenario in scenarios:
            sc = cfg.scenario_config(scenario, seeds[0])
            for method in methods:
                fc = cfg.federation_config(method, seeds[0])
                if fc.n_clients != sc.n_clients:
                    raise ConfigError("federation.n_clients must match scenario.n_clients")
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_config(raw)


def with_overrides(cfg: ExperimentConfig, **over) -> ExperimentConfig:
    """Apply CLI overrides (None means keep) and revalidate."""
    raw = cfg.to_dict()
    raw["jobs"] = cfg.jobs
    for key, value in over.items():
        if value is not None:
            raw[key] = value
    return parse_config(raw)


# ---------------------------------------------------------------- grid cells


@dataclass
class CellResult:
    method: str
    scenario: str
    seed: int
    records: list[dict]
    trace: list[list]
    final_accuracy: float
    final_routing: float | None


def _run_cell(cfg: ExperimentConfig, method: str, scenario: str, seed: int, out: Path | None) -> CellResult:
    fed = build_scenario(cfg.scenario_config(scenario, seed))
    fcfg = cfg.federation_config(method, seed)
    tcfg = cfg.train_config()
    routing = None
    if method.startswith("fedrouter"):
        run = run_federation(fed, fcfg, tcfg, method=method)
        trace_rows = run.trace
        if cfg.outputs.routing_dump:
            routing, offset = [], 0
            for c in run.clients:
                test = fed.test[c.client_id]
                rows = routing_rows(test, fcfg.eval_mode, c.local_centroids, run.model, c.client_id, run.cluster_task, offset)
                routing += [[c.client_id] + r for r in rows]
                offset += len(test)
        extra = {"eval_mode": fcfg.eval_mode}
    else:
        runner = {"fedavg": run_fedavg, "local": run_local_only, "fedcluster": run_fedcluster}[method]
        run = runner(fed, fcfg, tcfg)
        trace_rows = run.trace
        extra = {"eval_mode": "none"}
    records = run.report.as_dicts(**extra)
    trace = [[method, scenario, seed, r.round, r.client_id, r.global_cluster, r.mode, r.samples] for r in trace_rows]
    final = run.report.final
    result = CellResult(
        method, scenario, seed, records, trace,
        final.accuracy if final else float("nan"),
        final.routing_accuracy if final else None,
    )
    if out is not None:
        _write_cell(cfg, out, result, routing)
    return result


def cell_dir(out: Path, method: str, scenario: str, seed: int) -> Path:
    return Path(out) / method / scenario / f"seed{seed}"


def _write_jsonl(path: Path, comment: str, records: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# {comment}\n")
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _write_csv(path: Path, comment: str, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _write_cell(cfg: ExperimentConfig, out: Path, res: CellResult, routing) -> None:
    d = cell_dir(out, res.method, res.scenario, res.seed)
    d.mkdir(parents=True, exist_ok=True)
    comment = cfg.header(res.seed)
    _write_jsonl(d / "metrics.jsonl", comment, res.records)
    if cfg.outputs.trace:
        _write_csv(d / "trace.csv", comment, TRACE_HEADER, res.trace)
    if routing is not None:
        _write_csv(d / "routing.csv", comment, ["client_id", "sample", "true_task", "mode", "chosen_cluster", "distance", "correct"], routing)


def read_jsonl(path: str | Path) -> list[dict]:
    """Read a metrics file, skipping ``#`` header lines."""
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip() and not line.startswith("#")]


def read_csv_rows(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


def summarize(cells: list[CellResult], cfg: ExperimentConfig) -> list[list]:
    """One row per (method, scenario): mean and sample std of per-seed finals."""
    rows = []
    for method in cfg.methods:
        for scenario in cfg.scenarios:
            group = [c for c in cells if c.method == method and c.scenario == scenario]
            acc = [c.final_accuracy for c in group]
            rout = [c.final_routing for c in group if c.final_routing is not None]
            mode = cfg.eval_mode if method.startswith("fedrouter") else "none"
            rows.append(
                [
                    method, scenario, mode, len(acc),
                    repr(float(np.mean(acc))),
                    repr(float(np.std(acc, ddof=1))) if len(acc) >= 2 else "",
                    repr(float(np.mean(rout))) if rout else "",
                    repr(float(np.std(rout, ddof=1))) if len(rout) >= 2 else "",
                ]
            )
    return rows


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    cells: list[CellResult]
    summary: list[list]

    def summary_dicts(self) -> list[dict]:
        return [dict(zip(SUMMARY_HEADER, row)) for row in self.summary]


def grid(cfg: ExperimentConfig) -> list[tuple[str, str, int]]:
    return [(m, s, seed) for m in cfg.methods for s in cfg.scenarios for seed in cfg.seeds]


def run_experiment(cfg: ExperimentConfig, out: str | Path | None = None) -> ExperimentResult:
    """Run the whole grid; with ``out`` set, write per-cell and top-level artifacts."""
    out = None if out is None else Path(out)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    cells_todo = grid(cfg)
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            futures = [pool.submit(_run_cell, cfg, m, s, seed, out) for m, s, seed in cells_todo]
            cells = [f.result() for f in futures]
    else:
        cells = []
        for m, s, seed in cells_todo:
            cells.append(_run_cell(cfg, m, s, seed, out))
            log.info("%s/%s/seed%d final accuracy %.4f", m, s, seed, cells[-1].final_accuracy)
    summary = summarize(cells, cfg)
    if out is not None:
        comment = cfg.header(cfg.seeds_label())
        _write_jsonl(out / "metrics.jsonl", comment, [r for c in cells for r in c.records])
        if cfg.outputs.trace:
            _write_csv(out / "trace.csv", comment, TRACE_HEADER, [r for c in cells for r in c.trace])
        _write_csv(out / "summary.csv", comment, SUMMARY_HEADER, summary)
    return ExperimentResult(cfg, cells, summary)


# ---------------------------------------------------------------- silhouette


@dataclass
class SilhouetteTable:
    scope: str
    scenario: str
    seed: int
    k_values: list[int]
    mean: list[float]
    std: list[float | None]  # across clients; None for global scope
    n: int  # clients averaged (1 for global scope)

    @property
    def argmax(self) -> int:
        best = max(range(len(self.k_values)), key=lambda i: (self.mean[i], -self.k_values[i]))
        return self.k_values[best]

    def rows(self) -> list[list]:
        out = []
        for k, m, s in zip(self.k_values, self.mean, self.std):
            out.append([self.scope, self.scenario, self.seed, k, repr(m), "" if s is None else repr(s), self.n])
        return out


SILHOUETTE_HEADER = ["scope", "scenario", "seed", "k", "mean", "std", "n"]


def silhouette_report(
    fed: Federation,
    scope: str,
    k_range: tuple[int, int] = (2, 8),
    n_l=None,
) -> SilhouetteTable | None:
    """Silhouette score against k.

    Global scope scores the pooled client centroids (clients cluster locally
    with ``n_l``, by default their true task count). Local scope scores each
    client's embeddings and reports mean and std across clients; it returns
    None for the single scenario, where every client holds one task.
    """
    k_min, k_max = k_range
    if k_min < 2 or k_max < k_min:
        raise ValueError(f"invalid k range {k_range}; need 2 <= k_min <= k_max")
    seed = fed.config.master_seed
    if scope == "global":
        clients = setup_clients(fed, FederationConfig(n_clients=fed.n_clients, master_seed=seed, n_l=n_l))
        points = np.concatenate([c.local_centroids for c in clients])
        top = min(k_max, len(points) - 1)
        if top < k_min:
            raise ValueError(f"only {len(points)} centroids; cannot score k >= {k_min}")
        if top < k_max:
            log.info("global scope: %d centroids, scoring k up to %d", len(points), top)
        _, scores = select_k_silhouette(points, k_min, top, derive_seed(seed, TAG_GLOBAL_CLUSTER))
        ks = sorted(scores)
        return SilhouetteTable("global", fed.config.scenario, seed, ks, [scores[k] for k in ks], [None] * len(ks), 1)
    if scope == "local":
        if fed.config.scenario == "single":
            log.warning("local silhouette skipped for the single scenario: each client holds one task")
            return None
        per_client = []
        for i, data in enumerate(fed.train):
            top = min(k_max, len(data) - 1)
            _, scores = select_k_silhouette(data.embeddings, k_min, top, derive_seed(seed, TAG_LOCAL_CLUSTER, i))
            per_client.append(scores)
        ks = sorted(per_client[0])
        mat = np.array([[s[k] for k in ks] for s in per_client])
        std = mat.std(axis=0, ddof=1) if len(per_client) >= 2 else [None] * len(ks)
        return SilhouetteTable(
            "local", fed.config.scenario, seed, ks,
            [float(v) for v in mat.mean(axis=0)],
            [None if v is None else float(v) for v in std],
            len(per_client),
        )
    raise ValueError(f"scope must be 'local' or 'global', got {scope!r}")


def write_silhouette_csv(path: str | Path, tables: list[SilhouetteTable], comment: str) -> None:
    _write_csv(Path(path), comment, SILHOUETTE_HEADER, [r for t in tables for r in t.rows()])


# ---------------------------------------------------------------- embeddings


def export_embeddings(fed: Federation, path: str | Path, comment: str | None = None, n_l=None) -> list[Path]:
    """Write ``client{i}_train.csv`` and ``client{i}_test.csv`` with a local-cluster column.

    Train rows carry the client's k-means assignment; test rows carry the
    nearest local centroid.
    """
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    seed = fed.config.master_seed
    clients = setup_clients(fed, FederationConfig(n_clients=fed.n_clients, master_seed=seed, n_l=n_l))
    written = []
    for c in clients:
        train_p = out / f"client{c.client_id}_train.csv"
        export_embedding_csv(fed.train[c.client_id], train_p, c.local_clusters.assignments, comment)
        test = fed.test[c.client_id]
        test_p = out / f"client{c.client_id}_test.csv"
        export_embedding_csv(test, test_p, assign_all(test.embeddings, c.local_centroids)[0], comment)
        written += [train_p, test_p]
    return written
