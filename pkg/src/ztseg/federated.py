"""Simulated weighted FedAvg with partial participation and a momentum server."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .autoencoder import SGD, Adam, DivergenceError, ModelParams, loss_and_grads, reconstruction_error

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    local_epochs: int = 3
    batch_size: int = 64
    rounds: int = 50
    client_optimizer: str = "adam"
    client_lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    server_lr: float = 1.0
    server_momentum: float = 0.9
    participation: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.participation <= 1.0:
            raise ValueError("participation must lie in (0, 1]")
        for name in ("local_epochs", "batch_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.rounds < 0:
            raise ValueError("rounds must be non-negative")
        if self.client_optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown client optimizer {self.client_optimizer!r}")
        if self.client_lr < 0 or self.server_lr < 0 or not 0 <= self.server_momentum < 1:
            raise ValueError("learning rates must be >= 0 and momentum in [0, 1)")


@dataclass
class RoundLog:
    round: int
    train_benign_mse: float
    val_benign_mse: float | None
    val_attack_mse: float | None
    participants: list[int] = field(default_factory=list)

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class ServerState:
    params: ModelParams
    velocity: np.ndarray | None = None


def _client_optimizer(config: TrainConfig):
    if config.client_optimizer == "sgd":
        return SGD(config.client_lr)
    return Adam(config.client_lr, config.beta1, config.beta2, config.eps)


def local_train(params: ModelParams, rows, config: TrainConfig, rng=None):
    """Run ``local_epochs`` shuffled minibatch passes; returns (params, last batch loss)."""
    rows = np.asarray(rows, dtype=np.float64)
    if len(rows) == 0:
        raise ValueError("empty shard")
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    params = params.copy()
    arrays = params.arrays()
    opt = _client_optimizer(config)
    loss = float("nan")
    for _ in range(config.local_epochs):
        order = rng.permutation(len(rows))
        for start in range(0, len(rows), config.batch_size):
            batch = rows[order[start:start + config.batch_size]]
            loss, gW, gb = loss_and_grads(params, batch)
            if not np.isfinite(loss):
                raise DivergenceError("non-finite local loss")
            grads = [g for pair in zip(gW, gb) for g in pair]
            opt.step(arrays, grads)
    return params, loss


def n_participants(K: int, participation: float) -> int:
    return max(1, math.ceil(participation * K - 1e-9))


def fedavg_round(state, client_rows, config: TrainConfig, round_seed, eval_sets=None, round_index=0):
    """One server round.

    ``client_rows`` is a list of per-client feature matrices (index = client
    id). Participants are sampled without replacement, each trains from the
    current global weights, and the server applies the weighted-average
    pseudo-gradient through momentum SGD.
    """
    if isinstance(state, ModelParams):
        state = ServerState(state)
    K = len(client_rows)
    rng = np.random.default_rng(round_seed)
    m = n_participants(K, config.participation)
    chosen = np.sort(rng.choice(K, size=m, replace=False))
    if all(len(client_rows[k]) == 0 for k in chosen):
        raise ValueError("all sampled shards are empty")

    total = 0.0
    acc = np.zeros(state.params.n_params)
    used = []
    for k in chosen:
        rows = client_rows[k]
        if len(rows) == 0:
            continue
        client_rng = np.random.default_rng([*np.atleast_1d(round_seed).tolist(), int(k)])
        try:
            local, _ = local_train(state.params, rows, config, client_rng)
        except DivergenceError:
            log.warning("client %d diverged in round %d; update discarded", k, round_index)
            continue
        acc += len(rows) * local.flat()
        total += len(rows)
        used.append(int(k))
    if not used:
        raise DivergenceError(f"every client diverged in round {round_index}")

    g = state.params.flat()
    delta = g - acc / total
    velocity = delta if state.velocity is None else config.server_momentum * state.velocity + delta
    new = ServerState(state.params.with_flat(g - config.server_lr * velocity), velocity)
    return new, evaluate_round(new.params, round_index, used, eval_sets or {})


def evaluate_round(params, round_index, participants, eval_sets):
    def mse(key):
        X = eval_sets.get(key)
        if X is None or len(X) == 0:
            return None
        return float(np.mean(reconstruction_error(params, X)))

    return RoundLog(round_index, mse("train_benign") or 0.0, mse("val_benign"), mse("val_attack"), participants)


def train_federated(params: ModelParams, client_rows, config: TrainConfig, eval_sets=None):
    """Run ``config.rounds`` FedAvg rounds from ``params``.

    Returns the final global model and one RoundLog per round.
    """
    state = ServerState(params.copy())
    logs = []
    for r in range(config.rounds):
        state, entry = fedavg_round(state, client_rows, config, [config.seed, r], eval_sets, r + 1)
        logs.append(entry)
        log.debug("round %d: %s", r + 1, entry)
    return state.params, logs
