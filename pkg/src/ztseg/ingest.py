"""Flow-table loading, preprocessing, splitting and client partitioning."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)

FEATURE_ROLES = ("numeric", "categorical")
META_ROLES = ("src_ip", "dst_ip", "src_port", "dst_port", "label", "protocol", "meta")
MAX_CATEGORIES = 10_000


class IngestError(ValueError):
    pass


@dataclass
class RawFlowTable:
    """Parsed rows plus the role of every column.

    ``frame`` holds only the columns named in ``roles``. Meta-role columns are
    carried into the sidecar and never reach the feature matrix.
    """

    frame: pd.DataFrame
    roles: dict[str, str]
    dropped: int = 0
    source_rows: np.ndarray | None = None  # data-row number of each kept row

    def __post_init__(self):
        if len(set(self.frame.columns)) != len(self.frame.columns):
            raise IngestError("duplicate column names")
        for col, role in self.roles.items():
            if role not in FEATURE_ROLES + META_ROLES:
                raise IngestError(f"unknown role {role!r} for column {col!r}")
        lab = self.label_column
        if lab is not None:
            vals = set(pd.unique(self.frame[lab]))
            if not vals <= {0, 1}:
                raise IngestError(f"label column {lab!r} must be in {{0,1}}, got {sorted(vals)[:5]}")

    def __len__(self):
        return len(self.frame)

    @property
    def row_ids(self):
        return np.arange(len(self.frame)) if self.source_rows is None else np.asarray(self.source_rows)

    def columns_with(self, role: str) -> list[str]:
        return [c for c, r in self.roles.items() if r == role]

    def _single(self, role):
        cols = self.columns_with(role)
        return cols[0] if cols else None

    @property
    def label_column(self):
        return self._single("label")

    @property
    def protocol_column(self):
        return self._single("protocol")

    @property
    def labels(self):
        col = self.label_column
        return None if col is None else self.frame[col].to_numpy(dtype=np.int64)


@dataclass
class FlowTable:
    features: np.ndarray
    feature_names: list[str]
    sidecar: pd.DataFrame
    scaler_state: dict[str, dict]
    encoder_state: dict[str, list]
    unseen_count: int = 0
    constant_columns: list[str] = field(default_factory=list)
    label_column: str | None = None
    protocol_column: str | None = None

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def d(self):
        return self.features.shape[1]

    @property
    def labels(self):
        if self.label_column is None:
            return None
        return self.sidecar[self.label_column].to_numpy(dtype=np.int64)

    @property
    def protocols(self):
        if self.protocol_column is None:
            return None
        return self.sidecar[self.protocol_column].to_numpy()

    def inverse_numeric(self, name: str) -> np.ndarray:
        """Undo the z-score of one numeric column."""
        st = self.scaler_state[name]
        j = self.feature_names.index(name)
        return self.features[:, j] * st["std"] + st["mean"]

    def save(self, directory: Path, stem: str = "flow_table") -> list[Path]:
        directory = Path(directory)
        mat = directory / f"{stem}.npy"
        np.save(mat, np.ascontiguousarray(self.features, dtype="<f8"))
        side = directory / f"{stem}_sidecar.csv"
        self.sidecar.to_csv(side, index=False)
        meta = directory / f"{stem}.json"
        meta.write_text(json.dumps({
            "feature_names": self.feature_names,
            "scaler_state": self.scaler_state,
            "encoder_state": self.encoder_state,
            "unseen_count": self.unseen_count,
            "constant_columns": self.constant_columns,
            "label_column": self.label_column,
            "protocol_column": self.protocol_column,
        }, indent=2, sort_keys=True, default=_json_default))
        return [mat, side, meta]

    @classmethod
    def load(cls, directory: Path, stem: str = "flow_table") -> "FlowTable":
        directory = Path(directory)
        meta = json.loads((directory / f"{stem}.json").read_text())
        side = pd.read_csv(directory / f"{stem}_sidecar.csv", dtype=str, keep_default_na=False)
        if meta["label_column"] is not None:
            side[meta["label_column"]] = side[meta["label_column"]].astype(np.int64)
        return cls(
            features=np.load(directory / f"{stem}.npy"),
            feature_names=meta["feature_names"],
            sidecar=side,
            scaler_state=meta["scaler_state"],
            encoder_state=meta["encoder_state"],
            unseen_count=meta["unseen_count"],
            constant_columns=meta["constant_columns"],
            label_column=meta["label_column"],
            protocol_column=meta["protocol_column"],
        )


@dataclass
class SplitIndex:
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray
    val_benign_idx: np.ndarray | None = None
    val_attack_idx: np.ndarray | None = None

    def sizes(self):
        return len(self.train_idx), len(self.val_idx), len(self.test_idx)

    def tag_validation(self, labels):
        if labels is None:
            return self
        v = self.val_idx
        self.val_benign_idx = v[labels[v] == 0]
        self.val_attack_idx = v[labels[v] == 1]
        return self

    def to_json(self):
        out = {k: getattr(self, k) for k in ("train_idx", "val_idx", "test_idx", "val_benign_idx", "val_attack_idx")}
        return {k: None if v is None else [int(i) for i in v] for k, v in out.items()}

    @classmethod
    def from_json(cls, obj):
        return cls(**{k: None if v is None else np.asarray(v, dtype=np.int64) for k, v in obj.items()})


@dataclass
class ClientShard:
    client_id: int
    row_indices: np.ndarray

    @property
    def n_k(self):
        return len(self.row_indices)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(type(o))


def load_csv(path, schema: dict[str, str]) -> RawFlowTable:
    """Read a headered CSV and keep the columns named in ``schema``.

    Rows whose numeric feature cells fail to parse (or are NaN/inf), or whose
    categorical/meta cells are empty, are dropped; the count is kept on the
    returned table.
    """
    path = Path(path)
    if not path.exists():
        raise IngestError(f"no such file: {path}")
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    missing = [c for c in schema if c not in df.columns]
    if missing:
        raise IngestError(f"schema references absent columns: {missing}")
    df = df[list(schema)]

    ok = np.ones(len(df), dtype=bool)
    out = {}
    for col, role in schema.items():
        s = df[col].str.strip()
        if role in ("numeric", "label"):
            num = pd.to_numeric(s, errors="coerce").to_numpy(dtype=float)
            ok &= np.isfinite(num)
            out[col] = num
        else:
            ok &= (s != "").to_numpy()
            out[col] = s
    frame = pd.DataFrame(out)[ok].reset_index(drop=True)
    dropped = int((~ok).sum())
    for col, role in schema.items():
        if role == "label":
            frame[col] = frame[col].astype(np.int64)
    if dropped:
        log.info("dropped %d unparseable rows from %s", dropped, path)
    if len(frame) == 0:
        raise IngestError("zero rows after cleaning")
    return RawFlowTable(frame=frame, roles=dict(schema), dropped=dropped, source_rows=np.flatnonzero(ok))


def fit_preprocess(raw: RawFlowTable, train_idx) -> FlowTable:
    """Fit z-score and one-hot state on the training rows, transform all rows."""
    train_idx = np.asarray(train_idx, dtype=np.int64)
    if len(train_idx) == 0:
        raise IngestError("train_idx is empty")
    blocks, names = [], []
    scaler, encoder, constant = {}, {}, []
    unseen = 0
    for col, role in raw.roles.items():
        if role == "numeric":
            x = raw.frame[col].to_numpy(dtype=float)
            xt = x[train_idx]
            mu = float(xt.mean())
            sd = float(xt.std())
            if sd == 0.0 or not np.isfinite(sd):
                constant.append(col)
                sd_used = 1.0
                z = np.zeros_like(x)
            else:
                sd_used = sd
                z = (x - mu) / sd
            scaler[col] = {"mean": mu, "std": sd_used, "constant": sd == 0.0}
            blocks.append(z[:, None])
            names.append(col)
        elif role == "categorical":
            vals = raw.frame[col].astype(str).to_numpy()
            vocab = sorted(set(vals[train_idx]))
            if len(vocab) > MAX_CATEGORIES:
                raise IngestError(f"categorical column {col!r} has {len(vocab)} training categories")
            pos = {v: i for i, v in enumerate(vocab)}
            onehot = np.zeros((len(vals), len(vocab)))
            for r, v in enumerate(vals):
                j = pos.get(v)
                if j is None:
                    unseen += 1
                else:
                    onehot[r, j] = 1.0
            encoder[col] = vocab
            blocks.append(onehot)
            names.extend(f"{col}={v}" for v in vocab)
    if not blocks:
        raise IngestError("schema defines no feature columns")
    meta_cols = [c for c, r in raw.roles.items() if r in META_ROLES]
    sidecar = raw.frame[meta_cols].copy()
    for c in meta_cols:
        if raw.roles[c] != "label":
            sidecar[c] = sidecar[c].astype(str)
    return FlowTable(
        features=np.hstack(blocks),
        feature_names=names,
        sidecar=sidecar.reset_index(drop=True),
        scaler_state=scaler,
        encoder_state=encoder,
        unseen_count=unseen,
        constant_columns=constant,
        label_column=raw.label_column,
        protocol_column=raw.protocol_column,
    )


def split_80_10_10(n: int, seed: int, ratios=(0.8, 0.1, 0.1)) -> SplitIndex:
    if n < 10:
        raise IngestError("need at least 10 rows to split")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(ratios[0] * n))
    n_val = int(round(ratios[1] * n))
    return SplitIndex(
        train_idx=np.sort(perm[:n_train]),
        val_idx=np.sort(perm[n_train:n_train + n_val]),
        test_idx=np.sort(perm[n_train + n_val:]),
    )


def dirichlet_partition(table, rows, K: int, alpha: float, seed: int) -> list[ClientShard]:
    """Non-IID split of ``rows`` over ``K`` clients, one Dirichlet draw per protocol.

    ``table`` is a FlowTable or a per-row protocol array indexed by row id. For each
    protocol class in sorted order the generator first draws the client
    proportions, then shuffles that class's rows and cuts them at the
    cumulative proportions.
    """
    rows = np.asarray(rows, dtype=np.int64)
    protocols = table.protocols if isinstance(table, FlowTable) else table
    if protocols is None:
        raise IngestError("dirichlet_partition needs a protocol column")
    if K < 2:
        raise IngestError("K must be at least 2")
    if len(rows) < K:
        raise IngestError(f"{len(rows)} rows cannot fill {K} clients")
    protocols = np.asarray(protocols)
    rng = np.random.default_rng(seed)
    buckets: list[list[np.ndarray]] = [[] for _ in range(K)]
    row_proto = protocols[rows]
    for cls in sorted(set(row_proto.tolist()), key=str):
        members = rows[row_proto == cls]
        p = rng.dirichlet(np.full(K, alpha))
        members = rng.permutation(members)
        cuts = (np.cumsum(p) * len(members)).astype(np.int64)[:-1]
        for k, part in enumerate(np.split(members, cuts)):
            buckets[k].append(part)
    shards = [np.sort(np.concatenate(b)) for b in buckets]
    # repair empty clients by borrowing one row from the current largest
    for k in range(K):
        if len(shards[k]) == 0:
            big = max(range(K), key=lambda j: (len(shards[j]), -j))
            shards[k] = shards[big][-1:]
            shards[big] = shards[big][:-1]
    return [ClientShard(k, s) for k, s in enumerate(shards)]


def shards_to_json(shards):
    return [{"client_id": s.client_id, "rows": [int(i) for i in s.row_indices]} for s in shards]


def shards_from_json(obj):
    return [ClientShard(o["client_id"], np.asarray(o["rows"], dtype=np.int64)) for o in obj]
