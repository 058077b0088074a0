"""Embedding trainers.

Two objectives share one Adam/early-stopping loop:

* NQE: mean over sampled index pairs of [fidelity(psi_i, psi_j) - t_ij]^2
  with t_ij = (1 + y_i y_j)/2, i.e. 1 for same-class pairs and 0 for
  different-class pairs. Gradients flow through the embedding circuit
  (analytically, with a finite-difference fallback switch) and then
  through the encoder.

* RBF alignment: mean over the strict upper triangle of
  [K_ij - delta(y_i, y_j)]^2 where K is the gamma=1 RBF kernel on encoder
  outputs.

Early stopping: training halts after `patience` consecutive epochs
without a strict improvement of the validation loss; the weights from the
best validation epoch are returned.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import featuremap
from .encoder import EncoderNetwork, GradientRecord
from .qcore import DensityMatrix, StateVector, trace_distance


class Objective(Enum):
    NQE = "nqe"
    RBF_ALIGN = "rbf_align"


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; aborting with diagnostics."""


@dataclass(frozen=True)
class PairBatch:
    """Index pairs (i, j) with i < j plus their class labels."""

    pairs: np.ndarray  # (B, 2) int
    y_i: np.ndarray  # (B,) in {-1, +1}
    y_j: np.ndarray

    def __post_init__(self):
        pairs = np.asarray(self.pairs, dtype=int)
        y_i = np.asarray(self.y_i, dtype=int)
        y_j = np.asarray(self.y_j, dtype=int)
        if pairs.ndim != 2 or pairs.shape[1] != 2 or pairs.shape[0] == 0:
            raise ValueError(f"pairs must be a non-empty (B, 2) array, got {pairs.shape}")
        if np.any(pairs[:, 0] >= pairs[:, 1]):
            raise ValueError("pairs must satisfy i < j")
        if len({(int(i), int(j)) for i, j in pairs}) != pairs.shape[0]:
            raise ValueError("duplicate pairs within a batch")
        for y in (y_i, y_j):
            if y.shape != (pairs.shape[0],) or not np.all(np.isin(y, (-1, 1))):
                raise ValueError("labels must be -1/+1 and match the batch size")
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "y_i", y_i)
        object.__setattr__(self, "y_j", y_j)

    @property
    def size(self) -> int:
        return self.pairs.shape[0]

    @property
    def targets(self) -> np.ndarray:
        """(1 + y_i y_j)/2: 1 for same-class pairs, 0 otherwise."""
        return (1.0 + self.y_i * self.y_j) / 2.0


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.005
    batch_pairs: int = 32
    max_epochs: int = 300
    patience: int = 40
    seed: int = 0
    optimizer: str = "adam"

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_pairs < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("batch_pairs, max_epochs and patience must be >= 1")
        if self.optimizer != "adam":
            raise ValueError(f"unsupported optimizer {self.optimizer!r}")


class EarlyStopper:
    """Stop after `patience` consecutive epochs without strict improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = None
        self.stale = 0

    def update(self, epoch: int, value: float) -> bool:
        """Record an epoch's validation value; returns True when it is a
        new best."""
        if value < self.best:
            self.best = value
            self.best_epoch = epoch
            self.stale = 0
            return True
        self.stale += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.stale >= self.patience


class AdamOptimizer:
    """Adam over an encoder's weight/bias lists (beta1=0.9, beta2=0.999)."""

    def __init__(self, net: EncoderNetwork, learning_rate: float):
        self.lr = learning_rate
        self.beta1, self.beta2, self.eps = 0.9, 0.999, 1e-8
        self.t = 0
        self.m = [np.zeros_like(w) for w in net.weights] + [np.zeros_like(b) for b in net.biases]
        self.v = [np.zeros_like(w) for w in net.weights] + [np.zeros_like(b) for b in net.biases]

    def step(self, net: EncoderNetwork, grads: GradientRecord) -> None:
        self.t += 1
        params = net.weights + net.biases
        gs = grads.d_weights + grads.d_biases
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, gs, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def sample_pair_batch(labels, batch_size: int, rng) -> PairBatch:
    """Sample index pairs uniformly without replacement within the batch,
    stratified so roughly half are same-class pairs (class imbalance keeps
    both residual types present)."""
    labels = np.asarray(labels, dtype=int)
    n = labels.shape[0]
    if n < 2:
        raise ValueError("need at least 2 samples to form pairs")
    pos = np.flatnonzero(labels == 1)
    neg = np.flatnonzero(labels == -1)
    same_classes = [c for c in (pos, neg) if len(c) >= 2]
    same_weights = np.array([len(c) * (len(c) - 1) / 2 for c in same_classes], dtype=float)
    can_diff = len(pos) >= 1 and len(neg) >= 1

    n_same_target = batch_size // 2 if can_diff else batch_size
    seen = set()
    pairs, y_i, y_j = [], [], []

    def push(i, j):
        i, j = (int(i), int(j)) if i < j else (int(j), int(i))
        if (i, j) in seen:
            return False
        seen.add((i, j))
        pairs.append((i, j))
        y_i.append(labels[i])
        y_j.append(labels[j])
        return True

    attempts = 0
    max_attempts = 60 * batch_size
    while len(pairs) < batch_size and attempts < max_attempts:
        attempts += 1
        want_same = len(pairs) < n_same_target or not can_diff
        if want_same and same_classes:
            c = same_classes[rng.choice(len(same_classes), p=same_weights / same_weights.sum())]
            i, j = rng.choice(c, size=2, replace=False)
            push(i, j)
        elif can_diff:
            push(rng.choice(pos), rng.choice(neg))
        else:
            break
    if not pairs:
        raise ValueError("could not sample any pairs from the given labels")
    return PairBatch(np.array(pairs), np.array(y_i), np.array(y_j))


def _pair_fidelities(encoder, map_spec, batch, X, want_grads, method="analytic"):
    """Shared NQE plumbing: encoder outputs, per-pair fidelities, and
    optionally the per-sample upstream d(loss)/d(encoder output)."""
    X = np.asarray(X, dtype=float)
    unique = np.unique(batch.pairs)
    index_of = {int(s): k for k, s in enumerate(unique)}
    Z = encoder.forward_batch(X[unique])
    if Z.shape[1] != map_spec.input_dim:
        raise ValueError(
            f"encoder output dim {Z.shape[1]} does not match map input dim {map_spec.input_dim}"
        )
    targets = batch.targets
    fids = np.empty(batch.size)
    upstream = np.zeros_like(Z) if want_grads else None
    states = {}

    def state_for(k):
        if k not in states:
            states[k] = featuremap.embed(map_spec, Z[k])
        return states[k]

    for b, (i, j) in enumerate(batch.pairs):
        ki, kj = index_of[int(i)], index_of[int(j)]
        if not want_grads:
            from .qcore import fidelity

            fids[b] = fidelity(state_for(ki), state_for(kj))
            continue
        if method == "analytic":
            fid, g_i, g_j = featuremap.fidelity_with_input_grads(map_spec, Z[ki], Z[kj])
        elif method == "fd":
            fid, g_i, g_j = featuremap.fidelity_input_grads_fd(map_spec, Z[ki], Z[kj])
        else:
            raise ValueError(f"unknown gradient method {method!r}")
        fids[b] = fid
        coeff = 2.0 * (fid - targets[b]) / batch.size
        upstream[ki] += coeff * g_i
        upstream[kj] += coeff * g_j
    return unique, X, fids, targets, upstream


def nqe_loss(encoder, map_spec, batch: PairBatch, X) -> float:
    """Mean over batch pairs of [fidelity - target]^2."""
    _, _, fids, targets, _ = _pair_fidelities(encoder, map_spec, batch, X, want_grads=False)
    return float(np.mean((fids - targets) ** 2))


def nqe_loss_gradient(encoder, map_spec, batch: PairBatch, X, method="analytic"):
    """Loss and its exact gradient w.r.t. encoder parameters.

    method "analytic" differentiates the circuit adjoint-style;
    "fd" keeps a central-difference fallback over the circuit angles.
    """
    unique, X, fids, targets, upstream = _pair_fidelities(
        encoder, map_spec, batch, X, want_grads=True, method=method
    )
    loss = float(np.mean((fids - targets) ** 2))
    grads = encoder.backward_batch(X[unique], upstream)
    return loss, grads


def _rbf_alignment_parts(encoder, X, y, idx=None):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if idx is not None:
        X, y = X[idx], y[idx]
    if X.shape[0] < 2:
        raise ValueError("alignment loss needs at least 2 samples")
    H = encoder.forward_batch(X)
    sq = np.sum(H**2, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (H @ H.T)
    np.maximum(d2, 0.0, out=d2)
    K = np.exp(-d2)  # gamma fixed at 1
    delta = (y[:, None] == y[None, :]).astype(float)
    return X, H, K, delta


def rbf_align_loss(encoder, X, y, idx=None) -> float:
    """Mean over strict-upper-triangle pairs of [K_ij - delta_ij]^2."""
    _, _, K, delta = _rbf_alignment_parts(encoder, X, y, idx)
    n = K.shape[0]
    iu = np.triu_indices(n, k=1)
    r = K[iu] - delta[iu]
    return float(np.mean(r**2))


def rbf_align_gradient(encoder, X, y, idx=None):
    Xs, H, K, delta = _rbf_alignment_parts(encoder, X, y, idx)
    n = K.shape[0]
    m = n * (n - 1) / 2.0
    R = K - delta
    np.fill_diagonal(R, 0.0)
    C = R * K
    # dL/dH_i = -(4/M) * sum_{j != i} C_ij (h_i - h_j), gamma = 1
    row = C.sum(axis=1)
    dH = -(4.0 / m) * (row[:, None] * H - C @ H)
    iu = np.triu_indices(n, k=1)
    loss = float(np.mean((K[iu] - delta[iu]) ** 2))
    grads = encoder.backward_batch(Xs, dH)
    return loss, grads


@dataclass
class TrainResult:
    encoder: EncoderNetwork
    history: list
    best_epoch: int
    best_val_loss: float


def _nqe_epoch(encoder, map_spec, X, y, config, rng, optimizer):
    steps = max(1, len(y) // (2 * config.batch_pairs))
    losses = []
    for _ in range(steps):
        batch = sample_pair_batch(y, config.batch_pairs, rng)
        loss, grads = nqe_loss_gradient(encoder, map_spec, batch, X)
        optimizer.step(encoder, grads)
        losses.append(loss)
    return float(np.mean(losses))


def _rbf_epoch(encoder, X, y, config, rng, optimizer):
    n = len(y)
    order = rng.permutation(n)
    chunk = max(2, config.batch_pairs)
    losses = []
    for start in range(0, n, chunk):
        idx = order[start : start + chunk]
        if len(idx) < 2:
            continue
        loss, grads = rbf_align_gradient(encoder, X, y, idx=idx)
        optimizer.step(encoder, grads)
        losses.append(loss)
    if not losses:
        raise ValueError("training split too small for alignment batches")
    return float(np.mean(losses))


def train_embedding(
    objective: Objective,
    encoder: EncoderNetwork,
    map_spec,
    X_train,
    y_train,
    X_val,
    y_val,
    config: TrainConfig,
) -> TrainResult:
    """Optimize the encoder under the chosen objective; returns the weights
    from the best-validation epoch and the per-epoch loss history."""
    X_train = np.asarray(X_train, dtype=float)
    y_train = np.asarray(y_train, dtype=int)
    X_val = np.asarray(X_val, dtype=float)
    y_val = np.asarray(y_val, dtype=int)
    if objective is Objective.NQE and map_spec is None:
        raise ValueError("NQE objective needs a feature-map spec")

    encoder = encoder.copy()
    rng = np.random.default_rng(config.seed)
    val_rng = np.random.default_rng(config.seed + 986_960_861)
    optimizer = AdamOptimizer(encoder, config.learning_rate)

    if objective is Objective.NQE:
        n_val_pairs = min(256, len(y_val) * (len(y_val) - 1) // 2)
        val_batch = sample_pair_batch(y_val, max(n_val_pairs, 1), val_rng)

        def val_loss():
            return nqe_loss(encoder, map_spec, val_batch, X_val)

        def run_epoch():
            return _nqe_epoch(encoder, map_spec, X_train, y_train, config, rng, optimizer)

    else:
        val_cap = min(512, len(y_val))
        val_idx = val_rng.choice(len(y_val), size=val_cap, replace=False)

        def val_loss():
            return rbf_align_loss(encoder, X_val, y_val, idx=val_idx)

        def run_epoch():
            return _rbf_epoch(encoder, X_train, y_train, config, rng, optimizer)

    stopper = EarlyStopper(config.patience)
    best = encoder.copy()
    history = []
    initial_val = val_loss()
    stopper.update(0, initial_val)
    history.append({"epoch": 0, "train_loss": float("nan"), "val_loss": initial_val})

    for epoch in range(1, config.max_epochs + 1):
        train_loss = run_epoch()
        v = val_loss()
        if not (np.isfinite(train_loss) and np.isfinite(v)):
            raise TrainingDivergedError(
                f"non-finite loss at epoch {epoch}: train={train_loss!r} val={v!r} "
                f"(lr={config.learning_rate}, seed={config.seed})"
            )
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": v})
        if stopper.update(epoch, v):
            best = encoder.copy()
        if stopper.should_stop:
            break
    return TrainResult(best, history, stopper.best_epoch, float(stopper.best))


def write_history_csv(history, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "train_loss", "val_loss"])
        for row in history:
            writer.writerow([row["epoch"], repr(row["train_loss"]), repr(row["val_loss"])])


def ensemble_trace_distance(
    encoder, map_spec, X, y, max_per_class: int = 512, seed: int = 0
) -> float:
    """Trace distance between the uniform mixtures of embedded states of the
    two classes; each class is capped at max_per_class seeded samples."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    rng = np.random.default_rng(seed)
    mixtures = []
    for cls in (+1, -1):
        idx = np.flatnonzero(y == cls)
        if len(idx) == 0:
            raise ValueError(f"split has no samples of class {cls:+d}")
        if len(idx) > max_per_class:
            idx = rng.choice(idx, size=max_per_class, replace=False)
        Z = encoder.forward_batch(X[idx])
        psi = np.stack([featuremap.embed(map_spec, z).amplitudes for z in Z])
        rho = (psi.T @ psi.conj()) / psi.shape[0]
        rho = (rho + rho.conj().T) / 2.0
        mixtures.append(DensityMatrix(map_spec.n_qubits, rho))
    return trace_distance(mixtures[0], mixtures[1])
