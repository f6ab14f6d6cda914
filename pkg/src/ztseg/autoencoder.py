"""Dense non-symmetric autoencoder with hand-written backprop.

Layers are stored as ``(W, b)`` with ``W`` shaped ``(fan_in, fan_out)`` so a
batch ``X`` of shape ``(n, d)`` maps through ``X @ W + b``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

LEAKY_SLOPE = 0.01


class DivergenceError(FloatingPointError):
    pass


@dataclass
class ModelParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[str]
    n_encoder: int

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ValueError("weights, biases and activations must align")
        if not 0 < self.n_encoder < len(self.weights):
            raise ValueError("need at least one encoder and one decoder layer")
        for a, b in zip(self.weights[:-1], self.weights[1:]):
            if a.shape[1] != b.shape[0]:
                raise ValueError("consecutive layer widths disagree")
        if self.weights[0].shape[0] != self.weights[-1].shape[1]:
            raise ValueError("decoder output width must equal input width")

    @property
    def input_dim(self):
        return self.weights[0].shape[0]

    @property
    def latent_dim(self):
        return self.weights[self.n_encoder - 1].shape[1]

    @property
    def layer_dims(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def arrays(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, vec) -> "ModelParams":
        vec = np.asarray(vec, dtype=np.float64)
        arrays, pos = [], 0
        for a in self.arrays():
            arrays.append(vec[pos:pos + a.size].reshape(a.shape).copy())
            pos += a.size
        if pos != vec.size:
            raise ValueError(f"expected {pos} parameters, got {vec.size}")
        return ModelParams(arrays[0::2], arrays[1::2], list(self.activations), self.n_encoder)

    def copy(self) -> "ModelParams":
        return self.with_flat(self.flat())

    @property
    def n_params(self):
        return sum(a.size for a in self.arrays())

    def save(self, blob_path, manifest_path, extra=None):
        blob = np.ascontiguousarray(self.flat(), dtype="<f8").tobytes()
        Path(blob_path).write_bytes(blob)
        manifest = {
            "layer_dims": self.layer_dims,
            "activations": self.activations,
            "n_encoder": self.n_encoder,
            "n_params": self.n_params,
            "dtype": "<f8",
            "sha256": hashlib.sha256(blob).hexdigest(),
        }
        manifest.update(extra or {})
        Path(manifest_path).write_text(json.dumps(manifest, indent=2, sort_keys=True))

    @classmethod
    def load(cls, blob_path, manifest_path) -> "ModelParams":
        manifest = json.loads(Path(manifest_path).read_text())
        dims = manifest["layer_dims"]
        template = cls(
            [np.zeros((a, b)) for a, b in zip(dims[:-1], dims[1:])],
            [np.zeros(b) for b in dims[1:]],
            manifest["activations"],
            manifest["n_encoder"],
        )
        vec = np.frombuffer(Path(blob_path).read_bytes(), dtype="<f8")
        return template.with_flat(vec)


def init_params(d: int, latent: int = 25, encoder_hidden=(256, 64), decoder_hidden=(128,),
                seed: int = 0) -> ModelParams:
    """Glorot-uniform weights, zero biases; hidden layers leaky, latent and output linear."""
    rng = np.random.default_rng(seed)
    dims = [d, *encoder_hidden, latent, *decoder_hidden, d]
    n_encoder = len(encoder_hidden) + 1
    weights, biases, acts = [], [], []
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
        last = i == len(dims) - 2
        acts.append("linear" if last or i == n_encoder - 1 else "leaky_relu")
    return ModelParams(weights, biases, acts, n_encoder)


def _act(a, kind):
    if kind == "linear":
        return a
    return np.where(a > 0, a, LEAKY_SLOPE * a)


def _act_grad(a, kind):
    if kind == "linear":
        return np.ones_like(a)
    return np.where(a > 0, 1.0, LEAKY_SLOPE)


def _check_width(params, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.input_dim:
        raise ValueError(f"expected batch of width {params.input_dim}, got shape {X.shape}")
    return X


def _run(params, X, layers):
    h = X
    for i in layers:
        h = _act(h @ params.weights[i] + params.biases[i], params.activations[i])
    return h


def forward(params: ModelParams, batch):
    X = _check_width(params, batch)
    z = _run(params, X, range(params.n_encoder))
    recon = _run(params, z, range(params.n_encoder, len(params.weights)))
    return z, recon


def encode_all(params: ModelParams, X) -> np.ndarray:
    return forward(params, X)[0]


def reconstruction_error(params: ModelParams, rows) -> np.ndarray:
    """Per-row mean squared reconstruction residual."""
    X = _check_width(params, rows)
    _, recon = forward(params, X)
    return np.mean((X - recon) ** 2, axis=1)


def loss_and_grads(params: ModelParams, X):
    """Batch MSE (mean over rows and features) and its gradient per array."""
    X = _check_width(params, X)
    pre, outs = [], [X]
    h = X
    for W, b, kind in zip(params.weights, params.biases, params.activations):
        a = h @ W + b
        h = _act(a, kind)
        pre.append(a)
        outs.append(h)
    resid = h - X
    loss = float(np.mean(resid ** 2))
    g_h = 2.0 * resid / resid.size
    gW = [None] * len(params.weights)
    gb = [None] * len(params.weights)
    for i in range(len(params.weights) - 1, -1, -1):
        delta = g_h * _act_grad(pre[i], params.activations[i])
        gW[i] = outs[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i:
            g_h = delta @ params.weights[i].T
    return loss, gW, gb


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = self.v = None

    def step(self, arrays, grads):
        if self.m is None:
            self.m = [np.zeros_like(a) for a in arrays]
            self.v = [np.zeros_like(a) for a in arrays]
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for a, g, m, v in zip(arrays, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            a -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class SGD:
    def __init__(self, lr=1e-3):
        self.lr = lr

    def step(self, arrays, grads):
        for a, g in zip(arrays, grads):
            a -= self.lr * g
