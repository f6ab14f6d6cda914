"""Pipeline configuration: one flat dataclass, loadable from YAML/JSON and
overridable field-for-field from the command line."""
from __future__ import annotations

import dataclasses
import json
import os
import typing
from dataclasses import dataclass
from pathlib import Path

import yaml

SEED_ENV = "ZTSEG_SEED"
HYPERGRAPH_MODES = ("manifold_hypergraph", "knn_only", "none")
CLUSTERERS = ("hdbscan", "minibatch_kmeans")
THRESHOLDS = ("otsu",) + tuple(f"p{q}" for q in range(50, 100, 5))


class ConfigError(ValueError):
    def __init__(self, name, msg):
        super().__init__(f"config field {name!r}: {msg}")
        self.field = name


@dataclass
class PipelineConfig:
    # data
    data: str | None = None
    schema: dict | None = None
    synthetic_rows: int = 5000
    synthetic_shift: float = 6.0
    attack_fraction: float = 0.073
    # federation
    clients: int = 10
    alpha: float = 0.7
    participation: float = 0.8
    centralized: bool = False
    # autoencoder training
    rounds: int = 50
    local_epochs: int = 3
    batch_size: int = 64
    client_optimizer: str = "adam"
    client_lr: float = 1e-3
    server_lr: float = 1.0
    server_momentum: float = 0.9
    latent_dim: int = 25
    # hypergraph and embedding
    hypergraph: str = "manifold_hypergraph"
    k: int = 12
    t: int = 3
    hyperedge_scope: str = "global"
    d_emb: int = 10
    eig_tol: float = 1e-6
    eig_max_iter: int = 500
    # clustering
    clusterer: str = "hdbscan"
    k_clusters: int = 500
    kmeans_batch: int = 1024
    min_cluster_size: str = "auto"
    min_samples: int | None = None
    # risk and policy
    w1: float = 0.5
    w2: float = 0.5
    threshold: str = "otsu"
    # explanations
    explain: bool = True
    explain_sample: int | None = None
    surrogate_k: int = 25
    surrogate_holdout: float = 0.2
    lime_samples: int = 1000
    shap_mode: str = "exact"
    shap_background: int = 100
    ridge: float = 1.0
    top_m: int = 3
    stability_runs: int = 5
    stability_rows: int = 10
    # evaluation and bookkeeping
    silhouette_cap: int = 10_000
    seed: int = 0
    out: str = "runs/default"

    def __post_init__(self):
        self.validate()

    # ------------------------------------------------------------ validation
    def validate(self):
        def need(cond, name, msg):
            if not cond:
                raise ConfigError(name, msg)

        need(self.data is None or isinstance(self.data, str), "data", "must be a CSV path or null")
        need(self.data is not None or self.synthetic_rows >= 100, "synthetic_rows", "must be at least 100")
        need(self.schema is None or isinstance(self.schema, dict), "schema", "must map column names to roles")
        need(self.synthetic_shift > 0, "synthetic_shift", "must be positive")
        need(0 < self.attack_fraction < 1, "attack_fraction", "must lie in (0, 1)")
        need(self.clients >= 1, "clients", "must be at least 1")
        need(self.alpha > 0, "alpha", "must be positive")
        need(0 < self.participation <= 1, "participation", "must lie in (0, 1]")
        for name in ("rounds", "local_epochs", "batch_size", "latent_dim", "k", "t", "d_emb",
                     "eig_max_iter", "k_clusters", "kmeans_batch", "surrogate_k", "lime_samples",
                     "shap_background", "top_m", "silhouette_cap", "stability_rows"):
            need(isinstance(getattr(self, name), int) and getattr(self, name) >= 1, name, "must be a positive integer")
        need(self.client_optimizer in ("adam", "sgd"), "client_optimizer", "must be adam or sgd")
        for name in ("client_lr", "server_lr", "eig_tol", "ridge"):
            need(getattr(self, name) > 0, name, "must be positive")
        need(0 <= self.server_momentum < 1, "server_momentum", "must lie in [0, 1)")
        need(self.hypergraph in HYPERGRAPH_MODES, "hypergraph", f"must be one of {HYPERGRAPH_MODES}")
        need(self.hyperedge_scope in ("global", "client"), "hyperedge_scope", "must be global or client")
        need(self.k >= 2, "k", "must be at least 2")
        need(self.clusterer in CLUSTERERS, "clusterer", f"must be one of {CLUSTERERS}")
        mcs = str(self.min_cluster_size)
        need(mcs == "auto" or (mcs.isdigit() and int(mcs) >= 2), "min_cluster_size", "must be 'auto' or an integer >= 2")
        self.min_cluster_size = mcs
        need(self.min_samples is None or self.min_samples >= 1, "min_samples", "must be null or >= 1")
        need(self.w1 >= 0 and self.w2 >= 0 and abs(self.w1 + self.w2 - 1) <= 1e-12, "w1",
             "risk weights w1, w2 must be non-negative and sum to 1")
        need(self.threshold in THRESHOLDS, "threshold", f"must be one of {THRESHOLDS}")
        need(self.explain_sample is None or self.explain_sample >= 1, "explain_sample", "must be null or >= 1")
        need(0 < self.surrogate_holdout < 1, "surrogate_holdout", "must lie in (0, 1)")
        need(self.shap_mode in ("exact", "sampled"), "shap_mode", "must be exact or sampled")
        need(self.shap_mode != "exact" or self.d_emb <= 12, "shap_mode", "exact enumeration needs d_emb <= 12")
        need(self.stability_runs >= 2, "stability_runs", "must be at least 2")
        need(isinstance(self.seed, int) and self.seed >= 0, "seed", "must be a non-negative integer")
        return self

    # ------------------------------------------------------------ derived
    @property
    def n_clients(self):
        return 1 if self.centralized else self.clients

    @property
    def effective_participation(self):
        return 1.0 if self.centralized else self.participation

    @property
    def variant(self):
        if self.hypergraph == "none":
            return f"{self.clusterer} no-hypergraph"
        tag = f"{self.clusterer} {self.hypergraph}"
        return tag + (" centralized" if self.centralized else "")

    def to_dict(self):
        return dataclasses.asdict(self)

    def subset(self, names):
        d = self.to_dict()
        return {n: d[n] for n in names}


def field_types():
    hints = typing.get_type_hints(PipelineConfig)
    return {f.name: hints[f.name] for f in dataclasses.fields(PipelineConfig)}


def load_config(path=None, overrides=None, env=None) -> PipelineConfig:
    """File values, then the seed environment variable, then explicit overrides."""
    values = {}
    if path is not None:
        text = Path(path).read_text()
        values = (json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)) or {}
        if not isinstance(values, dict):
            raise ConfigError("<file>", "top level must be a mapping")
    known = set(field_types())
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(unknown[0], "unknown config key")
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        try:
            values["seed"] = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError("seed", f"{SEED_ENV}={env[SEED_ENV]!r} is not an integer") from None
    values.update(overrides or {})
    try:
        return PipelineConfig(**values)
    except TypeError as exc:
        raise ConfigError("<file>", str(exc)) from None


def dump_config(cfg: PipelineConfig, path):
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))


__all__ = ["PipelineConfig", "ConfigError", "load_config", "dump_config", "field_types", "SEED_ENV"]
