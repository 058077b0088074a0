"""The trainable classical network mapping descriptor vectors to circuit
angles or kernel features.

Plain fully connected layers: affine maps with tanh or relu on hidden
layers and an identity output. The backward pass returns exact
reverse-mode gradients of <upstream, forward(x)> with respect to every
weight and bias, which is all any of the trainers needs.

Weight files are a small versioned binary format: magic, version,
activation code, layer dims, then row-major float64 weights and biases
per layer.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

_ACTIVATIONS = ("tanh", "relu")
_MAGIC = b"QSEW"
_FORMAT_VERSION = 1


@dataclass
class GradientRecord:
    """Per-parameter gradients, shape-congruent with a network."""

    d_weights: list
    d_biases: list

    def scaled(self, factor: float) -> "GradientRecord":
        return GradientRecord(
            [factor * w for w in self.d_weights], [factor * b for b in self.d_biases]
        )

    def add_(self, other: "GradientRecord") -> None:
        for a, b in zip(self.d_weights, other.d_weights):
            a += b
        for a, b in zip(self.d_biases, other.d_biases):
            a += b


class EncoderNetwork:
    """Deterministic MLP; mutate weights only through a trainer you own."""

    def __init__(self, layer_dims, weights, biases, activation="tanh"):
        if activation not in _ACTIVATIONS:
            raise ValueError(f"activation must be one of {_ACTIVATIONS}, got {activation!r}")
        if len(layer_dims) < 2:
            raise ValueError("need at least input and output dims")
        if len(weights) != len(layer_dims) - 1 or len(biases) != len(layer_dims) - 1:
            raise ValueError("weights/biases do not match layer_dims")
        for i, (w, b) in enumerate(zip(weights, biases)):
            expected = (layer_dims[i + 1], layer_dims[i])
            if w.shape != expected or b.shape != (layer_dims[i + 1],):
                raise ValueError(f"layer {i} shapes {w.shape}/{b.shape} do not match {expected}")
        self.layer_dims = list(layer_dims)
        self.weights = weights
        self.biases = biases
        self.activation = activation

    @classmethod
    def initialize(cls, layer_dims, activation="tanh", seed=0):
        """Uniform init in [-a, a] with a = sqrt(6/(fan_in+fan_out))."""
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            a = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-a, a, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(layer_dims, weights, biases, activation)

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    def copy(self) -> "EncoderNetwork":
        return EncoderNetwork(
            list(self.layer_dims),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.activation,
        )

    def _activate(self, pre):
        if self.activation == "tanh":
            return np.tanh(pre)
        return np.maximum(pre, 0.0)

    def _activate_grad(self, pre):
        if self.activation == "tanh":
            t = np.tanh(pre)
            return 1.0 - t * t
        return (pre > 0.0).astype(float)

    def _forward_cached(self, x):
        """Returns (output, list of per-layer (input, pre-activation))."""
        cache = []
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            pre = h @ w.T + b
            cache.append((h, pre))
            h = pre if i == last else self._activate(pre)
        return h, cache

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.input_dim,):
            raise ValueError(f"expected input of length {self.input_dim}, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("input contains NaN or Inf")
        out, _ = self._forward_cached(x)
        return out

    def forward_batch(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise ValueError(f"expected (N, {self.input_dim}) inputs, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise ValueError("input contains NaN or Inf")
        out, _ = self._forward_cached(X)
        return out

    def backward_batch(self, X, upstream):
        """Gradients of sum_n <upstream[n], forward(X[n])> w.r.t. parameters."""
        X = np.asarray(X, dtype=float)
        upstream = np.asarray(upstream, dtype=float)
        if X.ndim != 2 or upstream.shape != (X.shape[0], self.output_dim):
            raise ValueError(
                f"upstream shape {upstream.shape} does not match inputs {X.shape} and "
                f"output dim {self.output_dim}"
            )
        _, cache = self._forward_cached(X)
        d_weights = [None] * len(self.weights)
        d_biases = [None] * len(self.biases)
        delta = upstream
        for i in range(len(self.weights) - 1, -1, -1):
            h_in, pre = cache[i]
            if i != len(self.weights) - 1:
                delta = delta * self._activate_grad(pre)
            d_weights[i] = delta.T @ h_in
            d_biases[i] = delta.sum(axis=0)
            if i > 0:
                delta = delta @ self.weights[i]
        return GradientRecord(d_weights, d_biases)

    def backward(self, x, upstream):
        """Gradients of <upstream, forward(x)> w.r.t. parameters."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.input_dim,):
            raise ValueError(f"expected input of length {self.input_dim}, got shape {x.shape}")
        return self.backward_batch(x[None, :], np.asarray(upstream, dtype=float)[None, :])

    def zero_gradients(self) -> GradientRecord:
        return GradientRecord(
            [np.zeros_like(w) for w in self.weights], [np.zeros_like(b) for b in self.biases]
        )


def save_weights(net: EncoderNetwork, path) -> None:
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<IBI", _FORMAT_VERSION, _ACTIVATIONS.index(net.activation), len(net.weights)))
        for dim in net.layer_dims:
            f.write(struct.pack("<I", dim))
        for w, b in zip(net.weights, net.biases):
            f.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_weights(path) -> EncoderNetwork:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _MAGIC:
            raise ValueError(f"not an encoder weight file (magic {magic!r})")
        version, act_code, n_layers = struct.unpack("<IBI", f.read(9))
        if version != _FORMAT_VERSION:
            raise ValueError(f"unsupported weight file version {version}")
        dims = list(struct.unpack(f"<{n_layers + 1}I", f.read(4 * (n_layers + 1))))
        weights, biases = [], []
        for i in range(n_layers):
            w = np.frombuffer(f.read(8 * dims[i + 1] * dims[i]), dtype="<f8").reshape(
                dims[i + 1], dims[i]
            )
            b = np.frombuffer(f.read(8 * dims[i + 1]), dtype="<f8")
            weights.append(w.copy())
            biases.append(b.copy())
    return EncoderNetwork(dims, weights, biases, _ACTIVATIONS[act_code])
