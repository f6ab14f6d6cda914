"""Staged, resumable pipeline with content-hashed artifacts.

Every stage reads its upstream artifacts from the output directory, writes
its own files there and records a key (hash of the config fields it uses plus
the digests of its upstream stages) in ``manifest.json``. A stage whose key
and output hashes still match is skipped on rerun.
"""
from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from filelock import FileLock, Timeout

from . import explain as xai
from . import hypergraph as hg
from . import metrics, policy, risk, segmentation, spectral
from .autoencoder import ModelParams, encode_all, init_params, reconstruction_error
from .config import PipelineConfig
from .federated import RoundLog, TrainConfig, train_federated
from .ingest import (FlowTable, SplitIndex, dirichlet_partition, fit_preprocess, load_csv,
                     shards_from_json, shards_to_json, split_80_10_10)
from .synthetic import SCHEMA as SYNTHETIC_SCHEMA
from .synthetic import generate_synthetic

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
REPORT = "run_report.json"


class StageError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage


class MissingArtifact(StageError):
    pass


class PipelineLocked(RuntimeError):
    pass


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()


@dataclass(frozen=True)
class Stage:
    name: str
    deps: tuple[str, ...]
    keys: tuple[str, ...]
    outputs: tuple[str, ...]


STAGES = (
    Stage("ingest", (), ("data", "schema", "synthetic_rows", "synthetic_shift", "attack_fraction",
                         "clients", "alpha", "centralized", "seed"),
          ("flow_table.npy", "flow_table_sidecar.csv", "flow_table.json", "split.json", "shards.json")),
    Stage("train", ("ingest",), ("rounds", "local_epochs", "batch_size", "client_optimizer", "client_lr",
                                 "server_lr", "server_momentum", "participation", "centralized",
                                 "latent_dim", "seed"),
          ("model.bin", "model.json", "rounds.jsonl")),
    Stage("encode", ("ingest", "train"), (), ("latent.npy", "recon_error.npy")),
    Stage("hypergraph", ("ingest", "encode"), ("hypergraph", "k", "t", "hyperedge_scope", "clients", "alpha", "seed"),
          ("hyperedges.jsonl", "hypergraph.json")),
    Stage("embed", ("encode", "hypergraph"), ("d_emb", "eig_tol", "eig_max_iter", "seed"),
          ("embedding.npy", "embedding.json")),
    Stage("cluster", ("embed",), ("clusterer", "k_clusters", "kmeans_batch", "min_cluster_size",
                                  "min_samples", "seed"),
          ("segmentation.csv", "segmentation.json")),
    Stage("risk", ("encode", "cluster"), ("w1", "w2", "threshold"), ("risk.json", "instance_risk.csv")),
    Stage("policy", ("ingest", "cluster", "risk"), (), ("policy_table.csv",)),
    Stage("explain", ("ingest", "encode", "embed", "cluster", "policy"),
          ("explain", "explain_sample", "surrogate_k", "surrogate_holdout", "lime_samples", "shap_mode",
           "shap_background", "ridge", "top_m", "stability_runs", "stability_rows", "seed"),
          ("explanations.jsonl", "policy_table_xai.csv", "explain.json")),
    Stage("eval", ("ingest", "embed", "cluster", "explain"), ("silhouette_cap", "seed", "hypergraph",
                                                               "clusterer", "centralized"),
          ("eval.json", "eval.txt")),
)
STAGE_NAMES = tuple(s.name for s in STAGES)
_BY_NAME = {s.name: s for s in STAGES}


class Pipeline:
    def __init__(self, config: PipelineConfig):
        self.cfg = config.validate()
        self.out = Path(config.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.manifest = self._read_manifest()
        self.status: dict[str, str] = {}

    # ------------------------------------------------------------ bookkeeping
    def _read_manifest(self):
        p = self.out / MANIFEST
        return json.loads(p.read_text()) if p.exists() else {}

    def _write_manifest(self):
        (self.out / MANIFEST).write_text(json.dumps(self.manifest, indent=2, sort_keys=True))

    def path(self, name) -> Path:
        return self.out / name

    def _fresh(self, stage: Stage, key: str) -> bool:
        entry = self.manifest.get(stage.name)
        if not entry or entry.get("key") != key:
            return False
        for f, h in entry["outputs"].items():
            p = self.path(f)
            if not p.exists() or sha256_file(p) != h:
                return False
        return True

    def stage_key(self, stage: Stage) -> str:
        upstream = {}
        for dep in stage.deps:
            entry = self.manifest.get(dep)
            missing = entry is None or any(not self.path(f).exists() for f in entry["outputs"])
            if missing:
                raise MissingArtifact(stage.name, f"upstream stage {dep!r} has no artifacts; run {dep!r} first")
            upstream[dep] = entry["digest"]
        cfg = self.cfg.subset(stage.keys)
        if stage.name == "ingest" and self.cfg.data:
            if not Path(self.cfg.data).is_file():
                raise StageError(stage.name, f"data file {self.cfg.data} not found")
            cfg["data_sha256"] = sha256_file(self.cfg.data)
        return _digest({"stage": stage.name, "config": cfg, "upstream": upstream})

    def run_stage(self, name: str, force: bool = False) -> str:
        stage = _BY_NAME[name]
        key = self.stage_key(stage)
        if not force and self._fresh(stage, key):
            self.status[name] = "skipped"
            log.info("stage %s up to date", name)
            return "skipped"
        log.info("stage %s running", name)
        t0 = time.perf_counter()
        try:
            getattr(self, f"_stage_{name}")()
        except MissingArtifact:
            raise
        except Exception as exc:
            raise StageError(name, f"{type(exc).__name__}: {exc}") from exc
        seconds = time.perf_counter() - t0
        hashes = {f: sha256_file(self.path(f)) for f in stage.outputs}
        self.manifest[name] = {"key": key, "outputs": hashes, "digest": _digest(hashes), "seconds": seconds}
        self._write_manifest()
        self.status[name] = "computed"
        return "computed"

    def run(self, stages=STAGE_NAMES, force=False):
        with _lock(self.out):
            for name in stages:
                self.run_stage(name, force)
            return self.write_report()

    # ------------------------------------------------------------ loaders
    def table(self) -> FlowTable:
        return FlowTable.load(self.out)

    def split(self) -> SplitIndex:
        return SplitIndex.from_json(json.loads(self.path("split.json").read_text()))

    def model(self) -> ModelParams:
        return ModelParams.load(self.path("model.bin"), self.path("model.json"))

    def latent(self):
        return np.load(self.path("latent.npy"))

    def embedding_coords(self):
        return np.load(self.path("embedding.npy"))

    def seg(self):
        return segmentation.Segmentation.load(self.out)

    def _raw(self):
        cfg = self.cfg
        if cfg.data:
            return load_csv(cfg.data, cfg.schema or SYNTHETIC_SCHEMA)
        return generate_synthetic(cfg.synthetic_rows, cfg.attack_fraction, seed=cfg.seed, shift=cfg.synthetic_shift)

    # ------------------------------------------------------------ stages
    def _stage_ingest(self):
        cfg = self.cfg
        raw = self._raw()
        split = split_80_10_10(len(raw), cfg.seed)
        table = fit_preprocess(raw, split.train_idx)
        labels = table.labels
        if labels is not None:
            split.tag_validation(labels)
            train_rows = split.train_idx[labels[split.train_idx] == 0]
        else:
            train_rows = split.train_idx
        protocols = table.protocols if table.protocols is not None else np.zeros(table.n, dtype=np.int64)
        shards = dirichlet_partition(protocols, train_rows, cfg.n_clients, cfg.alpha, cfg.seed)
        table.sidecar.insert(0, "DID", raw.row_ids)
        table.save(self.out)
        self.path("split.json").write_text(json.dumps(split.to_json(), sort_keys=True))
        self.path("shards.json").write_text(json.dumps(shards_to_json(shards), sort_keys=True))

    def _stage_train(self):
        cfg = self.cfg
        table, split = self.table(), self.split()
        shards = shards_from_json(json.loads(self.path("shards.json").read_text()))
        X = table.features
        tc = TrainConfig(local_epochs=cfg.local_epochs, batch_size=cfg.batch_size, rounds=cfg.rounds,
                         client_optimizer=cfg.client_optimizer, client_lr=cfg.client_lr, server_lr=cfg.server_lr,
                         server_momentum=cfg.server_momentum, participation=cfg.effective_participation,
                         seed=cfg.seed)
        labels = table.labels
        train = np.concatenate([s.row_indices for s in shards])
        evals = {"train_benign": X[np.sort(train)]}
        if labels is not None:
            evals["val_benign"] = X[split.val_idx[labels[split.val_idx] == 0]]
            evals["val_attack"] = X[split.val_idx[labels[split.val_idx] == 1]]
        else:
            evals["val_benign"] = X[split.val_idx]
        params = init_params(table.d, latent=cfg.latent_dim, seed=cfg.seed)
        params, logs = train_federated(params, [X[s.row_indices] for s in shards], tc, evals)
        params.save(self.path("model.bin"), self.path("model.json"),
                    extra={"train_config": tc.__dict__, "clients": len(shards)})
        self.path("rounds.jsonl").write_text("".join(entry.to_json() + "\n" for entry in logs))

    def _stage_encode(self):
        table, split, params = self.table(), self.split(), self.model()
        X = table.features[split.test_idx]
        np.save(self.path("latent.npy"), np.ascontiguousarray(encode_all(params, X), dtype="<f8"))
        np.save(self.path("recon_error.npy"), np.ascontiguousarray(reconstruction_error(params, X), dtype="<f8"))

    def _scope_shards(self, n):
        cfg = self.cfg
        if cfg.hyperedge_scope == "global" or cfg.n_clients == 1:
            return None
        table, split = self.table(), self.split()
        protocols = table.protocols
        protocols = protocols[split.test_idx] if protocols is not None else np.zeros(n, dtype=np.int64)
        return dirichlet_partition(protocols, np.arange(n), cfg.n_clients, cfg.alpha, cfg.seed)

    def _stage_hypergraph(self):
        cfg = self.cfg
        Z = self.latent()
        meta = {"mode": cfg.hypergraph, "n_vertices": len(Z), "scope": cfg.hyperedge_scope}
        if cfg.hypergraph == "none":
            self.path("hyperedges.jsonl").write_text("")
            meta.update(n_hyperedges=0)
        else:
            shards = self._scope_shards(len(Z))
            if cfg.hypergraph == "knn_only":
                h = hg.knn_hyperedges(Z, cfg.k, shards)
            else:
                h = hg.manifold_hyperedges(Z, cfg.k, cfg.t, shards)
            h.save_jsonl(self.path("hyperedges.jsonl"))
            meta.update(n_hyperedges=len(h.hyperedges), components=int(hg.connected_components(h)), k=cfg.k, t=cfg.t)
        self.path("hypergraph.json").write_text(json.dumps(meta, indent=2, sort_keys=True))

    def _stage_embed(self):
        cfg = self.cfg
        Z = self.latent()
        meta = json.loads(self.path("hypergraph.json").read_text())
        if meta["mode"] == "none":
            # no-hypergraph ablation: cluster the latent codes directly
            np.save(self.path("embedding.npy"), np.ascontiguousarray(Z, dtype="<f8"))
            self.path("embedding.json").write_text(json.dumps({"source": "latent", "d_emb": Z.shape[1]}, indent=2))
            return
        h = hg.Hypergraph.load_jsonl(self.path("hyperedges.jsonl"), len(Z), meta["mode"])
        L, dv = hg.laplacian(h)
        emb = spectral.spectral_embed(L, dv, cfg.d_emb, cfg.eig_tol, cfg.eig_max_iter, cfg.seed)
        emb.save(self.out, "embedding", extra={"source": "spectral", "mode": meta["mode"]})

    def _stage_cluster(self):
        cfg = self.cfg
        X = self.embedding_coords()
        mcs = cfg.min_cluster_size if cfg.min_cluster_size == "auto" else int(cfg.min_cluster_size)
        seg = segmentation.segment(X, cfg.clusterer, cfg.k_clusters, cfg.kmeans_batch, mcs, cfg.min_samples, cfg.seed)
        seg.save(self.out)

    def _stage_risk(self):
        cfg = self.cfg
        seg = self.seg()
        rep = risk.build_risk_report(np.load(self.path("recon_error.npy")), seg.outlierness, seg.labels,
                                     cfg.w1, cfg.w2, cfg.threshold)
        self.path("risk.json").write_text(rep.to_json())
        pd.DataFrame({"row_id": np.arange(len(rep.r)), "cluster_id": seg.labels, "e_norm": rep.e_norm,
                      "o_norm": rep.o_norm, "risk": rep.r}).to_csv(
            self.path("instance_risk.csv"), index=False, float_format="%.17g", lineterminator="\n")

    def _policy_columns(self, table):
        roles = {}
        for role in ("src_ip", "dst_ip", "src_port", "dst_port"):
            cols = [c for c in table.sidecar.columns if self._role_of(c) == role]
            if cols:
                roles[role] = cols[0]
        if "src_ip" not in roles or "dst_ip" not in roles:
            raise ValueError("policy generation needs src_ip and dst_ip columns in the schema")
        return roles

    def _role_of(self, col):
        schema = self.cfg.schema or SYNTHETIC_SCHEMA
        return schema.get(col)

    def _stage_policy(self):
        table, split, seg = self.table(), self.split(), self.seg()
        rep = json.loads(self.path("risk.json").read_text())
        R = {int(k): v for k, v in rep["cluster_risk"].items()}
        side = table.sidecar.iloc[split.test_idx].reset_index(drop=True)
        tab = policy.generate_policy(side, seg.labels, R, rep["tau_c"], self._policy_columns(table),
                                     row_ids=side["DID"].astype(np.int64).to_numpy())
        policy.write_policy_csv(tab, self.path("policy_table.csv"))

    def _stage_explain(self):
        cfg = self.cfg
        pol = policy.read_policy_csv(self.path("policy_table.csv"))
        if not cfg.explain:
            self.path("explanations.jsonl").write_text("")
            policy.write_policy_csv(pol, self.path("policy_table_xai.csv"))
            self.path("explain.json").write_text(json.dumps({"enabled": False}, indent=2))
            return
        table, split, seg = self.table(), self.split(), self.seg()
        X, Z = self.embedding_coords(), self.latent()
        F = table.features[split.test_idx]
        dids = table.sidecar["DID"].astype(np.int64).to_numpy()[split.test_idx]
        n = len(X)
        rng = np.random.default_rng([cfg.seed, 1])
        perm = rng.permutation(n)
        n_hold = max(1, int(round(cfg.surrogate_holdout * n)))
        hold, fit_rows = np.sort(perm[:n_hold]), np.sort(perm[n_hold:])
        sur = xai.fit_surrogate(X[fit_rows], seg.labels[fit_rows], cfg.surrogate_k)
        acc, macro, micro = metrics.surrogate_fidelity(sur, X[hold], seg.labels[hold])
        nn = seg.labels[hold] >= 0
        acc_nn = float(np.mean(sur.predict(X[hold][nn]) == seg.labels[hold][nn])) if nn.any() else None
        amap = xai.fit_attribute_map(X, Z, cfg.ridge)
        corr = xai.latent_feature_correlation(Z, F)
        bg = xai.background_sample(X[fit_rows], cfg.shap_background, cfg.seed)

        rows = np.arange(n)
        if cfg.explain_sample is not None and cfg.explain_sample < n:
            rows = np.sort(np.random.default_rng([cfg.seed, 2]).choice(n, cfg.explain_sample, replace=False))

        def explain_row(i, seed):
            e_l = xai.lime_explain(sur, X[i], cfg.lime_samples, seed)
            e_s = xai.shap_explain(sur, X[i], bg, cfg.shap_mode, seed=seed)
            return (xai.project_and_name(e_l, amap, corr, table.feature_names, cfg.top_m, int(dids[i]), "lime"),
                    xai.project_and_name(e_s, amap, corr, table.feature_names, cfg.top_m, int(dids[i]), "shap"))

        records, named = [], {}
        first = {}
        for i in rows:
            lime_e, shap_e = explain_row(i, cfg.seed)
            first[int(i)] = (lime_e, shap_e)
            records += [lime_e, shap_e]
            named[int(dids[i])] = {"lime": lime_e.names, "shap": shap_e.names}
        xai.write_jsonl(records, self.path("explanations.jsonl"))
        policy.write_policy_csv(policy.attach_explanations(pol, named), self.path("policy_table_xai.csv"))

        stab = self._stability(rows[:cfg.stability_rows], first, explain_row, amap, corr, table.feature_names)
        summary = {
            "enabled": True,
            "explained_rows": int(len(rows)),
            "surrogate": {"k": cfg.surrogate_k, "fit_rows": int(len(fit_rows)), "holdout_rows": int(len(hold))},
            "fidelity": {"accuracy": acc, "macro_f1": macro, "micro_f1": micro,
                         "accuracy_non_noise": acc_nn, "holdout_noise_rows": int((~nn).sum())},
            "attribute_map": {"ridge": amap.ridge, "rmse": amap.rmse},
            "stability": stab,
        }
        self.path("explain.json").write_text(json.dumps(summary, indent=2, sort_keys=True))

    def _stability(self, rows, first, explain_row, amap, corr, names):
        cfg = self.cfg
        k = min(5, cfg.d_emb)
        m = min(5, len(names))
        acc = {"lime": [], "shap": [], "lime_attributes": [], "shap_attributes": []}
        for i in rows:
            runs = [first[int(i)]] + [explain_row(i, cfg.seed + j) for j in range(1, cfg.stability_runs)]
            for pos, method in enumerate(("lime", "shap")):
                acc[method].append(xai.stability_score([xai.top_k(r[pos].emb_importances, k) for r in runs]))
                tops = [set(xai.project_and_name(r[pos].emb_importances, amap, corr, names, m).names) for r in runs]
                acc[f"{method}_attributes"].append(xai.stability_score(tops))
        out = {key: float(np.mean(v)) for key, v in acc.items()}
        out.update(rows=int(len(rows)), runs=cfg.stability_runs, top=k)
        return out

    def _stage_eval(self):
        cfg = self.cfg
        table, split, seg = self.table(), self.split(), self.seg()
        X = self.embedding_coords()
        truth = table.labels[split.test_idx] if table.labels is not None else None
        rep = metrics.evaluate(X, seg.labels, truth, cfg.silhouette_cap, cfg.seed, label=cfg.variant)
        ex = json.loads(self.path("explain.json").read_text())
        if ex.get("enabled"):
            rep.fidelity = ex["fidelity"]
            rep.explain_stability = ex["stability"]
        self.path("eval.json").write_text(rep.to_json())
        self.path("eval.txt").write_text(metrics.render_table([rep]) + "\n")

    # ------------------------------------------------------------ report
    def write_report(self):
        def load(name):
            p = self.path(name)
            return json.loads(p.read_text()) if p.exists() else None

        rounds = []
        if self.path("rounds.jsonl").exists():
            rounds = [json.loads(line) for line in self.path("rounds.jsonl").read_text().splitlines() if line]
        report = {
            "variant": self.cfg.variant,
            "config": self.cfg.to_dict(),
            "rounds": rounds,
            "hypergraph": load("hypergraph.json"),
            "embedding": load("embedding.json"),
            "segmentation": load("segmentation.json"),
            "risk": load("risk.json"),
            "explain": load("explain.json"),
            "eval": load("eval.json"),
            "timings": {s: self.manifest[s].get("seconds") for s in STAGE_NAMES if s in self.manifest},
            "stage_status": self.status,
        }
        self.path(REPORT).write_text(json.dumps(report, indent=2, sort_keys=True, default=str))
        return report


class _lock:
    """One pipeline instance per output directory."""

    def __init__(self, out):
        self._lock = FileLock(str(Path(out) / ".ztseg.lock"))

    def __enter__(self):
        try:
            self._lock.acquire(timeout=0)
        except Timeout:
            raise PipelineLocked(f"another pipeline holds {self._lock.lock_file}") from None
        return self

    def __exit__(self, *exc):
        self._lock.release()


def render_report(out) -> str:
    rep = json.loads((Path(out) / REPORT).read_text())
    lines = [f"variant: {rep['variant']}"]
    if rep["rounds"]:
        last = rep["rounds"][-1]
        lines.append(f"training: {len(rep['rounds'])} rounds, final benign val MSE {last.get('val_benign_mse')}, "
                     f"attack val MSE {last.get('val_attack_mse')}")
    if rep.get("hypergraph"):
        h = rep["hypergraph"]
        lines.append(f"hypergraph: mode {h['mode']}, {h.get('n_hyperedges', 0)} hyperedges, "
                     f"{h.get('components', 'n/a')} components")
    if rep.get("segmentation"):
        s = rep["segmentation"]
        lines.append(f"segmentation: {s['clusterer']}, {s['n_clusters']} clusters, sizes {s['size_quantiles']}, "
                     f"noise {s['noise_fraction']:.3f}")
    if rep.get("risk"):
        r = rep["risk"]
        lines.append(f"risk: tau_c={r['tau_c']:.4f} ({r['threshold_policy']}, {r['tau_position']}), "
                     f"{r['fraction_clusters_allowed']:.2%} of clusters allowed")
    if rep.get("eval"):
        e = rep["eval"]
        ev = metrics.EvalReport(**{k: e[k] for k in ("silhouette", "dbi", "n_clusters", "size_quantiles",
                                                       "noise_fraction", "security", "per_cluster", "fidelity",
                                                       "explain_stability", "label")})
        lines += ["", metrics.render_table([ev])]
        if not e.get("security_available"):
            lines.append("security metrics unavailable: no label column")
    if rep.get("timings"):
        lines += ["", "stage timings (s): " + ", ".join(f"{k}={v:.2f}" for k, v in rep["timings"].items() if v is not None)]
    return "\n".join(lines)


def run(config: PipelineConfig, stages=STAGE_NAMES, force=False):
    return Pipeline(config).run(stages, force)


# re-exported for callers that read round logs back
__all__ = ["Pipeline", "run", "render_report", "STAGES", "STAGE_NAMES", "StageError", "MissingArtifact",
           "PipelineLocked", "RoundLog"]
