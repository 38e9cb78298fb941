"""Task-centric personalized federated learning simulator.

Clients cluster their own data into task shards, the server groups shard
centroids across clients and averages the per-task adapters, and a
nearest-centroid router picks an adapter for each test sample.
"""

from fedrouter.adapter import AdapterParams, TrainConfig, average_adapters, init_adapter, train_sgd
from fedrouter.clustering import CentroidSet, assign_nearest, kmeans_fit, select_k_silhouette, silhouette_score
from fedrouter.datagen import EmbeddingMatrix, Federation, ScenarioConfig, TaskSpec, build_scenario
from fedrouter.server import FederationConfig, GlobalClusterModel, RoundPlan, run_federation

__all__ = [
    "AdapterParams",
    "CentroidSet",
    "EmbeddingMatrix",
    "Federation",
    "FederationConfig",
    "GlobalClusterModel",
    "RoundPlan",
    "ScenarioConfig",
    "TaskSpec",
    "TrainConfig",
    "assign_nearest",
    "average_adapters",
    "build_scenario",
    "init_adapter",
    "kmeans_fit",
    "run_federation",
    "select_k_silhouette",
    "silhouette_score",
    "train_sgd",
]
