"""Allow/Block policy table for intra- and inter-segment flows."""
from __future__ import annotations

from collections import Counter

import numpy as np
import pandas as pd

POLICY_COLUMNS = ["SRC_CID", "DST_CID", "SRC_CID_ORSc", "DID", "SIP", "DIP", "SPort", "DPort",
                  "Decision", "LIME_Top_Features", "SHAP_Top_Features"]
EXTERNAL = "external"
NOISE = -1


def device_clusters(src_ips, labels) -> dict[str, int]:
    """Majority cluster of each source device; ties go to the smaller cluster id."""
    votes: dict[str, Counter] = {}
    for ip, c in zip(src_ips, labels):
        votes.setdefault(str(ip), Counter())[int(c)] += 1
    return {ip: min(cnt.items(), key=lambda kv: (-kv[1], kv[0]))[0] for ip, cnt in votes.items()}


def decide(src_cid, dst_cid, risk: float, tau: float) -> str:
    if dst_cid == EXTERNAL or src_cid == NOISE or src_cid != dst_cid:
        return "Block"
    return "Allow" if risk <= tau else "Block"


def generate_policy(sidecar: pd.DataFrame, labels, cluster_risk: dict[int, float], tau: float,
                    columns: dict[str, str], row_ids=None, explanations=None) -> pd.DataFrame:
    """One policy row per flow.

    ``columns`` maps ``src_ip``/``dst_ip``/``src_port``/``dst_port`` to sidecar
    column names. ``explanations`` maps DID to ``{"lime": [...], "shap": [...]}``.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) != len(sidecar):
        raise ValueError("one cluster label per flow row required")
    row_ids = np.arange(len(labels)) if row_ids is None else np.asarray(row_ids)
    sip = sidecar[columns["src_ip"]].astype(str).to_numpy()
    dip = sidecar[columns["dst_ip"]].astype(str).to_numpy()
    sport = sidecar[columns["src_port"]].astype(str).to_numpy() if "src_port" in columns else [""] * len(labels)
    dport = sidecar[columns["dst_port"]].astype(str).to_numpy() if "dst_port" in columns else [""] * len(labels)
    dev = device_clusters(sip, labels)
    explanations = explanations or {}

    rows = []
    for i, src in enumerate(labels):
        src = int(src)
        dst = dev.get(dip[i], EXTERNAL)
        risk = cluster_risk[src]
        ex = explanations.get(int(row_ids[i]), {})
        rows.append((src, dst, risk, int(row_ids[i]), sip[i], dip[i], sport[i], dport[i],
                     decide(src, dst, risk, tau), ";".join(ex.get("lime", [])), ";".join(ex.get("shap", []))))
    return pd.DataFrame(rows, columns=POLICY_COLUMNS)


def attach_explanations(policy: pd.DataFrame, explanations) -> pd.DataFrame:
    out = policy.copy()
    out["LIME_Top_Features"] = [";".join(explanations.get(int(d), {}).get("lime", [])) for d in out["DID"]]
    out["SHAP_Top_Features"] = [";".join(explanations.get(int(d), {}).get("shap", [])) for d in out["DID"]]
    return out


def write_policy_csv(policy: pd.DataFrame, path):
    policy[POLICY_COLUMNS].to_csv(path, index=False, float_format="%.6f", lineterminator="\n")


def read_policy_csv(path) -> pd.DataFrame:
    return pd.read_csv(path, dtype=str, keep_default_na=False)
