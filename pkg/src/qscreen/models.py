"""Downstream classifiers: the 8-qubit circuit classifier built from
SU(4) convolution blocks, a kernel SVM on precomputed Gram matrices, PCA,
a single-layer logit classifier, and the evaluation metrics.

Circuit classifier layout (fixed): starting from all 8 qubits, each stage
applies a convolution layer followed by a pooling layer until one qubit
remains. A convolution layer tiles adjacent active-qubit pairs in two
offset sublayers (even pairs, then odd pairs); every block within a
sublayer shares one 15-angle SU(4) parameter set. A pooling layer pairs
the active qubits (first of each pair is discarded, second survives) and
applies CRz then CRx controlled by the discarded qubit onto the survivor,
two fresh angles per discarded qubit; discarded qubits are simply ignored
afterwards (exact simulation, no measurement). The prediction is
p = (1 - <Z_readout>)/2 on the last surviving qubit.

The SU(4) block is the standard 3-CNOT construction: U3 on each qubit,
CNOT(a->b), Ry on a and Rz on b, CNOT(b->a), Ry on a, CNOT(a->b), then U3
on each qubit, where U3(t1,t2,t3) = Rz(t2) Rx(-pi/2) Rz(t1) Rx(pi/2) Rz(t3).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import _circuit
from ._circuit import Op
from .kernels import GramMatrix
from .qcore import PauliAxis, StateVector
from .training import AdamOptimizer, EarlyStopper, TrainConfig, TrainingDivergedError


# ---------------------------------------------------------------------------
# SU(4) blocks


@dataclass(frozen=True)
class SU4Block:
    """A 15-angle two-qubit block acting on the ordered pair (q_a, q_b)."""

    angles: np.ndarray
    pair: tuple

    def __post_init__(self):
        angles = np.asarray(self.angles, dtype=float)
        if angles.shape != (15,):
            raise ValueError(f"SU4 block needs exactly 15 angles, got {angles.shape}")
        if not np.all(np.isfinite(angles)):
            raise ValueError("SU4 angles must be finite")
        object.__setattr__(self, "angles", angles)


def _rz(theta):
    return np.array([[np.exp(-0.5j * theta), 0], [0, np.exp(0.5j * theta)]])


def _rx(theta):
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return np.array([[c, -1j * s], [-1j * s, c]])


def _ry(theta):
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return np.array([[c, -s], [s, c]])


def u3_matrix(t1, t2, t3):
    """Rz(t2) Rx(-pi/2) Rz(t1) Rx(pi/2) Rz(t3); zero angles give identity."""
    return _rz(t2) @ _rx(-np.pi / 2) @ _rz(t1) @ _rx(np.pi / 2) @ _rz(t3)


_CNOT_AB = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)
_CNOT_BA = np.array([[1, 0, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0], [0, 1, 0, 0]], dtype=complex)


def su4_unitary(block: SU4Block) -> np.ndarray:
    """Dense 4x4 unitary of the block, q_a on the more significant bit."""
    a = block.angles
    pre = np.kron(u3_matrix(a[0], a[1], a[2]), u3_matrix(a[3], a[4], a[5]))
    mid1 = np.kron(_ry(a[6]), _rz(a[7]))
    mid2 = np.kron(_ry(a[8]), np.eye(2))
    post = np.kron(u3_matrix(a[9], a[10], a[11]), u3_matrix(a[12], a[13], a[14]))
    return post @ _CNOT_AB @ mid2 @ _CNOT_BA @ mid1 @ _CNOT_AB @ pre


def _u3_ops(qubit, base):
    """Tape ops for U3(theta[base], theta[base+1], theta[base+2]), rightmost
    factor applied first."""
    return [
        Op("rot", (qubit,), PauliAxis.Z, param=base + 2),
        Op("rot", (qubit,), PauliAxis.X, param=None, angle=np.pi / 2),
        Op("rot", (qubit,), PauliAxis.Z, param=base),
        Op("rot", (qubit,), PauliAxis.X, param=None, angle=-np.pi / 2),
        Op("rot", (qubit,), PauliAxis.Z, param=base + 1),
    ]


def _su4_ops(pair, base):
    qa, qb = pair
    ops = []
    ops += _u3_ops(qa, base)
    ops += _u3_ops(qb, base + 3)
    ops.append(Op("cnot", (qa, qb)))
    ops.append(Op("rot", (qa,), PauliAxis.Y, param=base + 6))
    ops.append(Op("rot", (qb,), PauliAxis.Z, param=base + 7))
    ops.append(Op("cnot", (qb, qa)))
    ops.append(Op("rot", (qa,), PauliAxis.Y, param=base + 8))
    ops.append(Op("cnot", (qa, qb)))
    ops += _u3_ops(qa, base + 9)
    ops += _u3_ops(qb, base + 12)
    return ops


# ---------------------------------------------------------------------------
# Circuit classifier


@lru_cache(maxsize=4)
def qcnn_layout(n_qubits: int = 8):
    """(ops, n_params, readout_qubit) for the fixed conv/pool architecture."""
    if n_qubits < 2 or n_qubits & (n_qubits - 1):
        raise ValueError("the circuit classifier needs a power-of-two qubit count >= 2")
    ops = []
    next_param = 0
    active = list(range(n_qubits))
    while len(active) > 1:
        even_pairs = [(active[i], active[i + 1]) for i in range(0, len(active) - 1, 2)]
        odd_pairs = [(active[i], active[i + 1]) for i in range(1, len(active) - 1, 2)]
        for sublayer in (even_pairs, odd_pairs):
            if not sublayer:
                continue
            base = next_param
            next_param += 15
            for pair in sublayer:  # shared angles across the sublayer
                ops += _su4_ops(pair, base)
        survivors = []
        for i in range(0, len(active) - 1, 2):
            discarded, kept = active[i], active[i + 1]
            ops.append(Op("crot", (discarded, kept), PauliAxis.Z, param=next_param))
            ops.append(Op("crot", (discarded, kept), PauliAxis.X, param=next_param + 1))
            next_param += 2
            survivors.append(kept)
        active = survivors
    return tuple(ops), next_param, active[0]


def qcnn_param_count(n_qubits: int = 8) -> int:
    return qcnn_layout(n_qubits)[1]


@dataclass(frozen=True)
class QCNNParams:
    """Flat parameter vector bound to the fixed architecture."""

    n_qubits: int
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        expected = qcnn_param_count(self.n_qubits)
        if values.shape != (expected,):
            raise ValueError(f"expected {expected} parameters for {self.n_qubits} qubits, got {values.shape}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def initialize(cls, n_qubits: int = 8, seed: int = 0, scale: float = 0.1):
        rng = np.random.default_rng(seed)
        return cls(n_qubits, rng.normal(scale=scale, size=qcnn_param_count(n_qubits)))

    @property
    def readout_qubit(self) -> int:
        return qcnn_layout(self.n_qubits)[2]


def _states_matrix(states) -> np.ndarray:
    if isinstance(states, np.ndarray):
        return states
    return np.stack([s.amplitudes for s in states])


def qcnn_forward_batch(states, params: QCNNParams) -> np.ndarray:
    """p = (1 - <Z_readout>)/2 per state; states may be StateVectors or a
    prestacked (B, 2**n) amplitude matrix."""
    ops, _, readout = qcnn_layout(params.n_qubits)
    amps = _states_matrix(states)
    out = _circuit.apply_ops(ops, params.values, amps, params.n_qubits)
    return (1.0 - _circuit.z_expectations(out, params.n_qubits, readout)) / 2.0


def qcnn_forward(state: StateVector, params: QCNNParams) -> float:
    if state.n_qubits != params.n_qubits:
        raise ValueError(f"state has {state.n_qubits} qubits, classifier expects {params.n_qubits}")
    return float(qcnn_forward_batch(state.amplitudes[None, :], params)[0])


def qcnn_prob_and_grad(states, params: QCNNParams, weights=None):
    """Per-state probability and d(sum_s w_s p_s)/d(params)."""
    ops, n_params, readout = qcnn_layout(params.n_qubits)
    amps = _states_matrix(states)
    expvals, g = _circuit.z_expectation_grad(
        ops, params.values, amps, params.n_qubits, readout, n_params, weights=weights
    )
    return (1.0 - expvals) / 2.0, -0.5 * g


def bce_loss(p: np.ndarray, y01: np.ndarray, eps: float = 1e-12) -> float:
    p = np.clip(p, eps, 1.0 - eps)
    return float(-np.mean(y01 * np.log(p) + (1.0 - y01) * np.log(1.0 - p)))


class _VectorAdam:
    def __init__(self, size, learning_rate):
        self.lr = learning_rate
        self.beta1, self.beta2, self.eps = 0.9, 0.999, 1e-8
        self.t = 0
        self.m = np.zeros(size)
        self.v = np.zeros(size)

    def step(self, values, grad):
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1**self.t)
        vhat = self.v / (1 - self.beta2**self.t)
        return values - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def qcnn_train(train_states, y_train, val_states, y_val, config: TrainConfig, n_qubits: int = 8):
    """Minimize binary cross-entropy on p; returns the best-validation
    parameters and the loss history."""
    amps_train = _states_matrix(train_states)
    amps_val = _states_matrix(val_states)
    y_train01 = (np.asarray(y_train, dtype=int) + 1) / 2.0
    y_val01 = (np.asarray(y_val, dtype=int) + 1) / 2.0
    rng = np.random.default_rng(config.seed)
    params = QCNNParams.initialize(n_qubits, seed=config.seed)
    values = params.values.copy()
    adam = _VectorAdam(values.shape[0], config.learning_rate)
    stopper = EarlyStopper(config.patience)
    history = []

    def val_loss(vals):
        p = qcnn_forward_batch(amps_val, QCNNParams(n_qubits, vals))
        return bce_loss(p, y_val01)

    v0 = val_loss(values)
    stopper.update(0, v0)
    best = values.copy()
    history.append({"epoch": 0, "train_loss": float("nan"), "val_loss": v0})
    n = amps_train.shape[0]
    batch = min(config.batch_pairs, n)
    eps = 1e-12
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            cur = QCNNParams(n_qubits, values)
            p = qcnn_forward_batch(amps_train[idx], cur)
            pc = np.clip(p, eps, 1.0 - eps)
            yb = y_train01[idx]
            # d(BCE)/dp per sample, folded into the batched circuit gradient
            dldp = (pc - yb) / (pc * (1.0 - pc)) / len(idx)
            _, g = qcnn_prob_and_grad(amps_train[idx], cur, weights=dldp)
            values = adam.step(values, g)
            losses.append(bce_loss(p, yb))
        train_loss = float(np.mean(losses))
        v = val_loss(values)
        if not (np.isfinite(train_loss) and np.isfinite(v)):
            raise TrainingDivergedError(f"non-finite circuit-classifier loss at epoch {epoch}")
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": v})
        if stopper.update(epoch, v):
            best = values.copy()
        if stopper.should_stop:
            break
    return QCNNParams(n_qubits, best), history


# ---------------------------------------------------------------------------
# SVM on precomputed kernels


@dataclass(frozen=True)
class SVMModel:
    """Soft-margin dual solution over a precomputed kernel."""

    alpha: np.ndarray
    dual_coef: np.ndarray  # alpha_i * y_i
    bias: float
    support: np.ndarray
    C: float
    kernel_kind: object
    kkt_residual: float


def svm_fit(gram: GramMatrix, labels, C: float = 1.0, tol: float = 1e-7, max_passes: int = 200_000):
    """Sequential minimal optimization over the dual of the soft-margin SVM.

    Uses maximal-violating-pair selection; stops when the KKT gap drops
    below tol. Returns (model, info) with info carrying the dual objective
    and iteration count.
    """
    y = np.asarray(labels, dtype=float)
    K = gram.entries
    n = y.shape[0]
    if y.shape[0] != gram.size:
        raise ValueError("labels do not match the Gram matrix size")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("labels must be -1/+1")
    if np.all(y == y[0]):
        raise ValueError("labels contain a single class")
    if C <= 0:
        raise ValueError("C must be positive")

    Q = (y[:, None] * y[None, :]) * K
    alpha = np.zeros(n)
    G = -np.ones(n)  # gradient of 0.5 a^T Q a - e^T a
    it = 0
    residual = np.inf
    while it < max_passes:
        it += 1
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        if not up.any() or not low.any():
            residual = 0.0
            break
        vals = -y * G
        i = int(np.flatnonzero(up)[np.argmax(vals[up])])
        j = int(np.flatnonzero(low)[np.argmin(vals[low])])
        residual = vals[i] - vals[j]
        if residual <= tol:
            break
        quad = Q[i, i] + Q[j, j] - 2.0 * y[i] * y[j] * Q[i, j]
        quad = max(quad, 1e-12)
        d = (vals[i] - vals[j]) / quad
        cap_i = C - alpha[i] if y[i] > 0 else alpha[i]
        cap_j = alpha[j] if y[j] > 0 else C - alpha[j]
        d = min(d, cap_i, cap_j)
        alpha[i] += y[i] * d
        alpha[j] -= y[j] * d
        # gradient update: G_t += Q_ti * dalpha_i + Q_tj * dalpha_j
        G += Q[:, i] * (y[i] * d) + Q[:, j] * (-y[j] * d)
        np.clip(alpha, 0.0, C, out=alpha)

    free = (alpha > 1e-10) & (alpha < C - 1e-10)
    if free.any():
        bias = float(np.mean(-y[free] * G[free]))
    else:
        vals = -y * G
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        hi = vals[up].max() if up.any() else 0.0
        lo = vals[low].min() if low.any() else 0.0
        bias = float((hi + lo) / 2.0)
    support = np.flatnonzero(alpha > 1e-10)
    dual_objective = float(alpha.sum() - 0.5 * alpha @ Q @ alpha)
    model = SVMModel(
        alpha=alpha,
        dual_coef=alpha * y,
        bias=bias,
        support=support,
        C=float(C),
        kernel_kind=gram.kernel_kind,
        kkt_residual=float(max(residual, 0.0)),
    )
    info = {"dual_objective": dual_objective, "iterations": it}
    return model, info


def svm_decision(model: SVMModel, kernel_rows: np.ndarray) -> np.ndarray:
    """Decision values for rows of kernel evaluations against the training
    set: f = K_row . (alpha * y) + b."""
    kernel_rows = np.asarray(kernel_rows, dtype=float)
    if kernel_rows.ndim == 1:
        kernel_rows = kernel_rows[None, :]
    if kernel_rows.shape[1] != model.alpha.shape[0]:
        raise ValueError(
            f"kernel rows have length {kernel_rows.shape[1]}, expected {model.alpha.shape[0]}"
        )
    return kernel_rows @ model.dual_coef + model.bias


def svm_predict(model: SVMModel, kernel_row: np.ndarray):
    """(label, margin) for one kernel row; sign convention: margin >= 0 -> +1."""
    margin = float(svm_decision(model, kernel_row)[0])
    return (1 if margin >= 0 else -1), margin


# ---------------------------------------------------------------------------
# PCA


@dataclass(frozen=True)
class PCAProjection:
    mean: np.ndarray
    components: np.ndarray  # (d, k), orthonormal columns
    explained_variance: np.ndarray

    def __post_init__(self):
        comps = np.asarray(self.components, dtype=float)
        gram = comps.T @ comps
        if np.max(np.abs(gram - np.eye(comps.shape[1]))) > 1e-10:
            raise ValueError("PCA components are not orthonormal")
        ev = np.asarray(self.explained_variance, dtype=float)
        if np.any(np.diff(ev) > 1e-12):
            raise ValueError("explained variances must be non-increasing")


def pca_fit(X, k: int) -> PCAProjection:
    """Top-k principal components of the training rows (and only those)."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < k:
        raise ValueError(f"need at least {k} training rows, got shape {X.shape}")
    mean = X.mean(axis=0)
    centered = X - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    rank = int(np.sum(s > max(s[0], 1e-300) * 1e-12)) if s.size else 0
    if rank < k:
        raise ValueError(f"training data has rank {rank}, cannot extract {k} components")
    comps = vt[:k].T.copy()
    # sign convention: the largest-magnitude coordinate of each component
    # is made positive so serialized projections are reproducible
    for c in range(k):
        idx = np.argmax(np.abs(comps[:, c]))
        if comps[idx, c] < 0:
            comps[:, c] = -comps[:, c]
    explained = (s[:k] ** 2) / max(X.shape[0] - 1, 1)
    return PCAProjection(mean, comps, explained)


def pca_transform(proj: PCAProjection, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    out = (np.atleast_2d(X) - proj.mean) @ proj.components
    return out[0] if single else out


# ---------------------------------------------------------------------------
# Single-layer classifier


@dataclass
class SingleLayerModel:
    weights: np.ndarray
    bias: float

    def logits(self, H) -> np.ndarray:
        return np.atleast_2d(np.asarray(H, dtype=float)) @ self.weights + self.bias

    def predict_proba(self, H) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.logits(H)))

    def predict(self, H) -> np.ndarray:
        return np.where(self.predict_proba(H) >= 0.5, 1, -1)


def _bce_with_logits(z, y01):
    # stable: log(1+exp(-|z|)) + max(z,0) - z*y
    return float(np.mean(np.maximum(z, 0.0) - z * y01 + np.log1p(np.exp(-np.abs(z)))))


def single_layer_train(H_train, y_train, H_val, y_val, config: TrainConfig, encoder=None, X_train=None, X_val=None, train_encoder=False):
    """One affine layer trained with binary cross-entropy on logits.

    When `encoder` is given the layer consumes encoder outputs; with
    train_encoder=True the encoder weights are updated jointly (the
    transfer-learning variant), otherwise they stay frozen.
    """
    rng = np.random.default_rng(config.seed)
    if encoder is not None:
        if X_train is None or X_val is None:
            raise ValueError("joint/frozen encoder training needs raw feature matrices")
        X_train = np.asarray(X_train, dtype=float)
        X_val = np.asarray(X_val, dtype=float)
        encoder = encoder.copy()
        H_train = encoder.forward_batch(X_train)
        H_val = encoder.forward_batch(X_val)
    H_train = np.asarray(H_train, dtype=float)
    H_val = np.asarray(H_val, dtype=float)
    y01_train = (np.asarray(y_train, dtype=int) + 1) / 2.0
    y01_val = (np.asarray(y_val, dtype=int) + 1) / 2.0
    dim = H_train.shape[1]
    model = SingleLayerModel(np.zeros(dim), 0.0)
    adam = _VectorAdam(dim + 1, config.learning_rate)
    enc_adam = AdamOptimizer(encoder, config.learning_rate) if (encoder is not None and train_encoder) else None
    stopper = EarlyStopper(config.patience)
    history = []

    def val_loss():
        h = encoder.forward_batch(X_val) if enc_adam is not None else H_val
        return _bce_with_logits(model.logits(h), y01_val)

    v0 = val_loss()
    stopper.update(0, v0)
    best = (model.weights.copy(), model.bias, encoder.copy() if encoder is not None else None)
    history.append({"epoch": 0, "train_loss": float("nan"), "val_loss": v0})
    n = H_train.shape[0]
    batch = min(config.batch_pairs, n)
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            h = encoder.forward_batch(X_train[idx]) if enc_adam is not None else H_train[idx]
            z = h @ model.weights + model.bias
            yb = y01_train[idx]
            losses.append(_bce_with_logits(z, yb))
            dz = (1.0 / (1.0 + np.exp(-z)) - yb) / len(idx)
            gw = h.T @ dz
            gb = dz.sum()
            if enc_adam is not None:
                upstream = dz[:, None] * model.weights[None, :]
                enc_adam.step(encoder, encoder.backward_batch(X_train[idx], upstream))
            packed = adam.step(np.concatenate([model.weights, [model.bias]]), np.concatenate([gw, [gb]]))
            model.weights, model.bias = packed[:-1], float(packed[-1])
        train_loss = float(np.mean(losses))
        v = val_loss()
        if not (np.isfinite(train_loss) and np.isfinite(v)):
            raise TrainingDivergedError(f"non-finite single-layer loss at epoch {epoch}")
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": v})
        if stopper.update(epoch, v):
            best = (model.weights.copy(), model.bias, encoder.copy() if encoder is not None else None)
        if stopper.should_stop:
            break
    model = SingleLayerModel(best[0], best[1])
    return (model, best[2], history) if encoder is not None else (model, history)


# ---------------------------------------------------------------------------
# Metrics


def metrics(y_true, y_pred) -> dict:
    """accuracy and balanced accuracy = (sensitivity + specificity)/2."""
    y_true = np.asarray(y_true, dtype=int)
    y_pred = np.asarray(y_pred, dtype=int)
    if y_true.shape != y_pred.shape or y_true.size == 0:
        raise ValueError("need equal-length, non-empty label vectors")
    if not (np.all(np.isin(y_true, (-1, 1))) and np.all(np.isin(y_pred, (-1, 1)))):
        raise ValueError("labels must be -1/+1")
    pos = y_true == 1
    neg = ~pos
    if not pos.any() or not neg.any():
        raise ValueError("balanced accuracy needs both classes in y_true")
    sens = float(np.mean(y_pred[pos] == 1))
    spec = float(np.mean(y_pred[neg] == -1))
    return {
        "accuracy": float(np.mean(y_pred == y_true)),
        "balanced_accuracy": (sens + spec) / 2.0,
    }
