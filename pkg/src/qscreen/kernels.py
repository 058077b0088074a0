"""Gram-matrix construction: fidelity quantum kernel, projected quantum
kernel over 1-qubit reduced density matrices, RBF, and linear kernels.

Every constructed GramMatrix is validated at construction: symmetry to
1e-10, unit diagonal for the normalized kernels, and smallest eigenvalue
no lower than -1e-8. A matrix failing validation raises with diagnostics
instead of being clipped.

The PQK exponent is computed from the reduced density matrices
(Frobenius route); construction spot-checks it against the independent
Pauli-expectation formula on up to 100 seeded random pairs.

Gram matrices serialize to a small binary cache format: magic, version,
kernel kind, N, a JSON params blob, then row-major float64 entries.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .qcore import PauliAxis, StateVector, pauli_expectation, reduced_density_1q

SYMMETRY_ATOL = 1e-10
DIAGONAL_ATOL = 1e-10
PSD_FLOOR = -1e-8

_MAGIC = b"QSGM"
_FORMAT_VERSION = 1


class KernelKind(Enum):
    FIDELITY = "fidelity"
    PQK = "pqk"
    RBF = "rbf"
    LINEAR = "linear"


_UNIT_DIAGONAL_KINDS = (KernelKind.FIDELITY, KernelKind.PQK, KernelKind.RBF)


class GramValidationError(ValueError):
    """A constructed kernel matrix violated symmetry, diagonal or PSD bounds."""


class DegenerateDataError(ValueError):
    """Statistics required by a kernel are degenerate (e.g. zero variance)."""


@dataclass(frozen=True)
class GramMatrix:
    """Symmetric kernel matrix with provenance."""

    size: int
    entries: np.ndarray
    kernel_kind: KernelKind
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=float)
        if entries.shape != (self.size, self.size):
            raise GramValidationError(
                f"entries shape {entries.shape} does not match size {self.size}"
            )
        asym = float(np.max(np.abs(entries - entries.T))) if self.size else 0.0
        if asym > SYMMETRY_ATOL:
            raise GramValidationError(f"kernel matrix asymmetry {asym:g} exceeds {SYMMETRY_ATOL:g}")
        if self.kernel_kind in _UNIT_DIAGONAL_KINDS:
            diag_err = float(np.max(np.abs(np.diag(entries) - 1.0)))
            if diag_err > DIAGONAL_ATOL:
                raise GramValidationError(
                    f"{self.kernel_kind.value} kernel diagonal deviates from 1 by {diag_err:g}"
                )
        min_eig = float(np.linalg.eigvalsh((entries + entries.T) / 2.0).min())
        if min_eig < PSD_FLOOR:
            raise GramValidationError(
                f"kernel matrix minimum eigenvalue {min_eig:g} below {PSD_FLOOR:g} "
                f"(kind={self.kernel_kind.value}, size={self.size})"
            )
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)


def _stack_states(states) -> np.ndarray:
    if not states:
        raise ValueError("need at least one state")
    n = states[0].n_qubits
    for s in states:
        if s.n_qubits != n:
            raise ValueError("states have mixed qubit counts")
    return np.stack([s.amplitudes for s in states])


def fidelity_gram(states) -> GramMatrix:
    """G[i][j] = |<psi_i|psi_j>|^2."""
    amps = _stack_states(states)
    overlaps = amps.conj() @ amps.T
    entries = np.abs(overlaps) ** 2
    entries = (entries + entries.T) / 2.0
    return GramMatrix(len(states), entries, KernelKind.FIDELITY, {"n_qubits": states[0].n_qubits})


def fidelity_cross(states_a, states_b) -> np.ndarray:
    """Rectangular |<a_i|b_j>|^2 block for predicting on held-out states."""
    amps_a = _stack_states(states_a)
    amps_b = _stack_states(states_b)
    if amps_a.shape[1] != amps_b.shape[1]:
        raise ValueError("states have mixed qubit counts")
    return np.abs(amps_a.conj() @ amps_b.T) ** 2


def rbf_entry(h_i, h_j, gamma: float = 1.0) -> float:
    """exp(-gamma * ||h_i - h_j||^2)."""
    h_i = np.asarray(h_i, dtype=float)
    h_j = np.asarray(h_j, dtype=float)
    if h_i.shape != h_j.shape:
        raise ValueError(f"length mismatch: {h_i.shape} vs {h_j.shape}")
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    return float(np.exp(-gamma * np.sum((h_i - h_j) ** 2)))


def _square_distances(features: np.ndarray) -> np.ndarray:
    sq = np.sum(features**2, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (features @ features.T)
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    return d2


def rbf_gram(features, gamma: float = 1.0) -> GramMatrix:
    features = np.asarray(features, dtype=float)
    if features.ndim != 2 or features.shape[0] == 0:
        raise ValueError("need a non-empty (N, d) feature matrix")
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    entries = np.exp(-gamma * _square_distances(features))
    entries = (entries + entries.T) / 2.0
    return GramMatrix(features.shape[0], entries, KernelKind.RBF, {"gamma": float(gamma)})


def rbf_cross(features_a, features_b, gamma: float = 1.0) -> np.ndarray:
    a = np.asarray(features_a, dtype=float)
    b = np.asarray(features_b, dtype=float)
    d2 = np.sum(a**2, axis=1)[:, None] + np.sum(b**2, axis=1)[None, :] - 2.0 * (a @ b.T)
    np.maximum(d2, 0.0, out=d2)
    return np.exp(-gamma * d2)


def linear_gram(features) -> GramMatrix:
    features = np.asarray(features, dtype=float)
    if features.ndim != 2 or features.shape[0] == 0:
        raise ValueError("need a non-empty (N, d) feature matrix")
    entries = features @ features.T
    entries = (entries + entries.T) / 2.0
    return GramMatrix(features.shape[0], entries, KernelKind.LINEAR, {})


def linear_cross(features_a, features_b) -> np.ndarray:
    return np.asarray(features_a, dtype=float) @ np.asarray(features_b, dtype=float).T


def pauli_expectation_vector(state: StateVector) -> np.ndarray:
    """Concatenated <X_q>, <Y_q>, <Z_q> over qubits, axis-major:
    [X_0..X_{n-1}, Y_0..Y_{n-1}, Z_0..Z_{n-1}]."""
    return np.array(
        [
            pauli_expectation(state, q, axis)
            for axis in (PauliAxis.X, PauliAxis.Y, PauliAxis.Z)
            for q in range(state.n_qubits)
        ]
    )


def pqk_gamma(expectations, d: int, mode: str = "pooled") -> float:
    """Bandwidth 1/(Var(v) * d) from concatenated Pauli expectations.

    mode "pooled" (default): one population variance over every entry of
    the (samples, 3n) table. mode "mean_per_observable": population
    variance per column, averaged; kept as a switch because the pooling
    granularity is a judgment call.
    """
    expectations = np.asarray(expectations, dtype=float)
    if expectations.ndim != 2 or expectations.shape[0] < 2:
        raise ValueError("need at least 2 samples of expectation vectors")
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    if mode == "pooled":
        var = float(np.var(expectations))
    elif mode == "mean_per_observable":
        var = float(np.mean(np.var(expectations, axis=0)))
    else:
        raise ValueError(f"unknown variance mode {mode!r}")
    if var <= 0.0:
        raise DegenerateDataError("Pauli expectations have zero variance; gamma undefined")
    return 1.0 / (var * d)


def _reduced_stack(states) -> np.ndarray:
    """(N, n_qubits, 2, 2) array of 1-qubit reduced density matrices."""
    return np.stack(
        [
            np.stack([reduced_density_1q(s, q).entries for q in range(s.n_qubits)])
            for s in states
        ]
    )


def pqk_exponent_frobenius(rdms_i: np.ndarray, rdms_j: np.ndarray) -> float:
    """sum_k ||rho_k(i) - rho_k(j)||_F^2 from stacked 2x2 reduced matrices."""
    return float(np.sum(np.abs(rdms_i - rdms_j) ** 2))


def pqk_exponent_pauli(v_i: np.ndarray, v_j: np.ndarray) -> float:
    """Same exponent from Pauli expectation vectors: (1/2) ||v_i - v_j||^2."""
    return float(0.5 * np.sum((np.asarray(v_i) - np.asarray(v_j)) ** 2))


_PQK_CHECK_PAIRS = 100
_PQK_CHECK_ATOL = 1e-10


def pqk_gram(states, gamma: float) -> GramMatrix:
    """G[i][j] = exp(-gamma * sum_k ||rho_k(i) - rho_k(j)||_F^2).

    The exponent uses the reduced-density route; up to 100 seeded random
    pairs are re-derived from Pauli expectations and must agree to 1e-10.
    """
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    rdms = _reduced_stack(states)
    n = len(states)
    diffs = rdms[:, None] - rdms[None, :]
    exponents = np.sum(np.abs(diffs) ** 2, axis=(2, 3, 4))
    exponents = (exponents + exponents.T) / 2.0
    entries = np.exp(-gamma * exponents)

    rng = np.random.default_rng(0)
    n_checks = min(_PQK_CHECK_PAIRS, n * n)
    vs = np.stack([pauli_expectation_vector(s) for s in states])
    for _ in range(n_checks):
        i, j = rng.integers(n), rng.integers(n)
        via_pauli = pqk_exponent_pauli(vs[i], vs[j])
        if abs(exponents[i, j] - via_pauli) > _PQK_CHECK_ATOL:
            raise GramValidationError(
                f"PQK exponent mismatch at pair ({i},{j}): Frobenius {exponents[i, j]!r} "
                f"vs Pauli {via_pauli!r}"
            )
    return GramMatrix(
        n, entries, KernelKind.PQK, {"gamma": float(gamma), "n_qubits": states[0].n_qubits}
    )


def pqk_cross(states_a, states_b, gamma: float) -> np.ndarray:
    rdms_a = _reduced_stack(states_a)
    rdms_b = _reduced_stack(states_b)
    diffs = rdms_a[:, None] - rdms_b[None, :]
    exponents = np.sum(np.abs(diffs) ** 2, axis=(2, 3, 4))
    return np.exp(-gamma * exponents)


def save_gram(gram: GramMatrix, path) -> None:
    params_blob = json.dumps(gram.params, sort_keys=True).encode("utf-8")
    kinds = [k.value for k in KernelKind]
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<IBII", _FORMAT_VERSION, kinds.index(gram.kernel_kind.value), gram.size, len(params_blob)))
        f.write(params_blob)
        f.write(np.ascontiguousarray(gram.entries, dtype="<f8").tobytes())


def load_gram(path) -> GramMatrix:
    kinds = list(KernelKind)
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _MAGIC:
            raise ValueError(f"not a gram cache file (magic {magic!r})")
        version, kind_code, size, params_len = struct.unpack("<IBII", f.read(13))
        if version != _FORMAT_VERSION:
            raise ValueError(f"unsupported gram cache version {version}")
        params = json.loads(f.read(params_len).decode("utf-8"))
        entries = np.frombuffer(f.read(8 * size * size), dtype="<f8").reshape(size, size)
    return GramMatrix(size, entries.copy(), kinds[kind_code], params)
