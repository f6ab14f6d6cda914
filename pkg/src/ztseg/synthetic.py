"""Desk-scale synthetic flow corpus with ground-truth labels.

Benign rows come from per-protocol Gaussian regimes. Attack rows reuse the
protocol regime of their victim but are shifted by ``shift`` standard
deviations on a fixed half of the numeric features and carry Laplace noise
(heavier tails than the benign Gaussian noise).
"""
from __future__ import annotations

import numpy as np
import pandas as pd

from .ingest import IngestError, RawFlowTable

PROTOCOL_IDS = ("6", "17", "2054", "35020", "0", "2", "58", "1")
NUMERIC = ("dur", "rate", "sbytes", "dbytes", "spkts", "dpkts",
           "sload", "dload", "sintpkt", "dintpkt", "tcprtt", "ttl")
SERVICES = ("modbus", "http", "dns", "arp", "ntp", "icmp", "mqtt", "other")
SERVICE_PORTS = (502, 80, 53, 0, 123, 0, 1883, 8080)

SCHEMA = {
    **{c: "numeric" for c in NUMERIC},
    "service": "categorical",
    "saddr": "src_ip",
    "daddr": "dst_ip",
    "sport": "src_port",
    "dport": "dst_port",
    "proto": "protocol",
    "target": "label",
}


def generate_synthetic(n: int, attack_fraction: float = 0.073, n_protocols: int = 4,
                       seed: int = 0, shift: float = 6.0) -> RawFlowTable:
    if n < 20:
        raise IngestError("synthetic corpus needs at least 20 rows")
    if not 0.0 < attack_fraction < 1.0:
        raise IngestError("attack_fraction must lie in (0, 1)")
    if not 1 <= n_protocols <= len(PROTOCOL_IDS):
        raise IngestError(f"n_protocols must be in [1, {len(PROTOCOL_IDS)}]")
    rng = np.random.default_rng(seed)
    d = len(NUMERIC)
    n_attack = int(round(attack_fraction * n))
    n_benign = n - n_attack

    scale = rng.uniform(1.0, 5.0, size=d)
    offset = rng.uniform(10.0, 100.0, size=d)
    regime_mean = rng.normal(0.0, 1.0, size=(n_protocols, d))
    shifted = np.zeros(d, dtype=bool)
    shifted[rng.choice(d, size=d // 2, replace=False)] = True

    proto_p = 0.6 ** np.arange(n_protocols)
    proto_p /= proto_p.sum()
    n_devices = max(2 * n_protocols, n // 25)
    device_proto = np.arange(n_devices) % n_protocols
    device_ip = [f"192.168.{1 + i // 250}.{1 + i % 250}" for i in range(n_devices)]
    attacker_ip = [f"10.0.0.{1 + i}" for i in range(max(1, n_attack // 50))]

    b_proto = rng.choice(n_protocols, size=n_benign, p=proto_p)
    b_x = regime_mean[b_proto] + rng.normal(0.0, 1.0, size=(n_benign, d))
    a_proto = rng.choice(n_protocols, size=n_attack, p=proto_p)
    a_x = regime_mean[a_proto] + shift * shifted + rng.laplace(0.0, 1.0, size=(n_attack, d))

    def pick_device(protos):
        out = np.empty(len(protos), dtype=np.int64)
        for p in range(n_protocols):
            mask = protos == p
            pool = np.flatnonzero(device_proto == p)
            out[mask] = rng.choice(pool, size=int(mask.sum()))
        return out

    b_src = pick_device(b_proto)
    b_dst = pick_device(b_proto)
    a_dst = pick_device(a_proto)
    a_src = rng.integers(0, len(attacker_ip), size=n_attack)

    proto = np.concatenate([b_proto, a_proto])
    x = np.vstack([b_x, a_x]) * scale + offset
    saddr = [device_ip[i] for i in b_src] + [attacker_ip[i] for i in a_src]
    daddr = [device_ip[i] for i in np.concatenate([b_dst, a_dst])]
    sport = rng.integers(1024, 65536, size=n)
    dport = np.array([SERVICE_PORTS[p] for p in proto])
    # attacks probe random service ports
    dport[n_benign:] = rng.integers(1, 1024, size=n_attack)
    label = np.r_[np.zeros(n_benign, dtype=np.int64), np.ones(n_attack, dtype=np.int64)]

    frame = pd.DataFrame({name: np.round(x[:, j], 6) for j, name in enumerate(NUMERIC)})
    frame["service"] = [SERVICES[p] for p in proto]
    frame["saddr"] = saddr
    frame["daddr"] = daddr
    frame["sport"] = sport.astype(str)
    frame["dport"] = dport.astype(str)
    frame["proto"] = [PROTOCOL_IDS[p] for p in proto]
    frame["target"] = label

    order = rng.permutation(n)
    frame = frame.iloc[order].reset_index(drop=True)
    return RawFlowTable(frame=frame, roles=dict(SCHEMA))
