"""ZZ and XYZ embedding circuits and their input-angle derivatives.

Both maps act on |0...0> and repeat a fixed layer `layers` times.

ZZ layer: H on every qubit, then one commuting diagonal exponential
    exp(i sum_k s_k Z_k + i sum_k p_k Z_k Z_{k+1})
with single angles s_k = z_k and pair angles
    p_k = (pi - z_k) * (pi - z_{k+1}) / 2
on the linear chain k = 0..n-2. The exponential is realised as a product
of single-qubit phase gates diag(e^{i s}, e^{-i s}) and two-qubit ZZ phase
gates in index order; all terms commute, so the product equals the
exponential exactly.

XYZ layer: the input supplies 2n raw angles; z[0..n-1] drive the single
terms and z[n..2n-1] the pair terms. Per layer, an X-type factor
    exp(i sum_k z_k X_k + i sum_k z_{n+k} X_k X_{k+1})
is applied first, then the Y-type factor, then the Z-type factor
(rightmost factor first). The chain is linear with no wraparound, so the
pair term at k = n-1 is dropped and the final raw angle z[2n-1] is inert.

Global-phase convention: exp(+i phi Z) = diag(e^{i phi}, e^{-i phi}).
Phases cancel in every downstream fidelity but are fixed for
reproducibility.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np

from . import _circuit
from ._circuit import Op
from .qcore import PauliAxis, StateVector, zero_state

DEFAULT_LAYERS = {"ZZ": 3, "XYZ": 2}


class FeatureMapKind(Enum):
    ZZ = "ZZ"
    XYZ = "XYZ"


class Entanglement(Enum):
    LINEAR = "linear"


@dataclass(frozen=True)
class FeatureMapSpec:
    """Declarative description of an embedding circuit."""

    kind: FeatureMapKind
    n_qubits: int
    layers: int | None = None
    entanglement: Entanglement = Entanglement.LINEAR

    def __post_init__(self):
        if self.n_qubits < 1:
            raise ValueError(f"n_qubits must be >= 1, got {self.n_qubits}")
        layers = self.layers if self.layers is not None else DEFAULT_LAYERS[self.kind.value]
        if layers < 1:
            raise ValueError(f"layers must be >= 1, got {layers}")
        object.__setattr__(self, "layers", layers)

    @property
    def input_dim(self) -> int:
        """Length of the raw angle vector the map consumes."""
        return self.n_qubits if self.kind is FeatureMapKind.ZZ else 2 * self.n_qubits

    @property
    def pair_indices(self) -> tuple:
        return tuple((k, k + 1) for k in range(self.n_qubits - 1))


@dataclass(frozen=True)
class AngleVector:
    """Single- and pair-term angles for one diagonal ZZ layer."""

    singles: np.ndarray
    pairs: np.ndarray

    def __post_init__(self):
        singles = np.asarray(self.singles, dtype=float)
        pairs = np.asarray(self.pairs, dtype=float)
        if pairs.shape[0] != max(singles.shape[0] - 1, 0):
            raise ValueError(
                f"pair count {pairs.shape[0]} does not match {singles.shape[0]} qubits on a line"
            )
        object.__setattr__(self, "singles", singles)
        object.__setattr__(self, "pairs", pairs)


def zz_angles(z: np.ndarray) -> AngleVector:
    """Map raw features to ZZ circuit angles: s_k = z_k,
    p_k = (pi - z_k)(pi - z_{k+1})/2 on adjacent pairs."""
    z = np.asarray(z, dtype=float)
    if z.ndim != 1:
        raise ValueError(f"expected a flat angle vector, got shape {z.shape}")
    pairs = (np.pi - z[:-1]) * (np.pi - z[1:]) / 2.0
    return AngleVector(z.copy(), pairs)


@lru_cache(maxsize=32)
def _template(kind: str, n_qubits: int, layers: int):
    """Op tape with parameter indices into the circuit angle vector theta.

    ZZ: theta = [singles (n), pairs (n-1)], XYZ: theta = raw z (2n).
    Returns (ops tuple, n_theta).
    """
    ops = []
    if kind == "ZZ":
        n_theta = 2 * n_qubits - 1
        for _ in range(layers):
            for q in range(n_qubits):
                ops.append(Op("h", (q,)))
            for q in range(n_qubits):
                ops.append(Op("phase1", (q,), PauliAxis.Z, param=q))
            for k in range(n_qubits - 1):
                ops.append(Op("phase2", (k, k + 1), PauliAxis.Z, param=n_qubits + k))
    else:
        n_theta = 2 * n_qubits
        for _ in range(layers):
            for axis in (PauliAxis.X, PauliAxis.Y, PauliAxis.Z):
                for q in range(n_qubits):
                    ops.append(Op("phase1", (q,), axis, param=q))
                for k in range(n_qubits - 1):
                    ops.append(Op("phase2", (k, k + 1), axis, param=n_qubits + k))
    return tuple(ops), n_theta


def circuit_theta(spec: FeatureMapSpec, z: np.ndarray) -> np.ndarray:
    """Raw input -> circuit angle vector bound to the op tape."""
    z = np.asarray(z, dtype=float)
    if z.shape != (spec.input_dim,):
        raise ValueError(
            f"{spec.kind.value} map on {spec.n_qubits} qubits needs {spec.input_dim} angles, "
            f"got shape {z.shape}"
        )
    if spec.kind is FeatureMapKind.ZZ:
        av = zz_angles(z)
        return np.concatenate([av.singles, av.pairs])
    return z.copy()


def embed(spec: FeatureMapSpec, z: np.ndarray) -> StateVector:
    """Embed raw angles z into an n-qubit state via the spec's circuit."""
    theta = circuit_theta(spec, z)
    ops, _ = _template(spec.kind.value, spec.n_qubits, spec.layers)
    amps = _circuit.apply_ops(ops, theta, zero_state(spec.n_qubits).amplitudes, spec.n_qubits)
    return StateVector(spec.n_qubits, amps)


def embed_zz(z: np.ndarray, spec: FeatureMapSpec) -> StateVector:
    if spec.kind is not FeatureMapKind.ZZ:
        raise ValueError(f"spec kind is {spec.kind.value}, expected ZZ")
    return embed(spec, z)


def embed_xyz(z: np.ndarray, spec: FeatureMapSpec) -> StateVector:
    if spec.kind is not FeatureMapKind.XYZ:
        raise ValueError(f"spec kind is {spec.kind.value}, expected XYZ")
    return embed(spec, z)


def _theta_grad_to_input(spec: FeatureMapSpec, z: np.ndarray, g_theta: np.ndarray) -> np.ndarray:
    """Chain a gradient over circuit angles back to the raw input vector."""
    if spec.kind is FeatureMapKind.XYZ:
        return g_theta.copy()
    n = spec.n_qubits
    g_z = g_theta[:n].copy()
    g_pairs = g_theta[n:]
    # p_k = (pi - z_k)(pi - z_{k+1})/2
    g_z[:-1] += g_pairs * (-(np.pi - z[1:]) / 2.0)
    g_z[1:] += g_pairs * (-(np.pi - z[:-1]) / 2.0)
    return g_z


def fidelity_with_input_grads(spec: FeatureMapSpec, z_i: np.ndarray, z_j: np.ndarray):
    """Fidelity of the two embeddings and its gradients w.r.t. both inputs.

    Returns (fid, g_i, g_j) where g_* has the spec's input_dim.
    """
    theta_i = circuit_theta(spec, z_i)
    theta_j = circuit_theta(spec, z_j)
    ops, n_theta = _template(spec.kind.value, spec.n_qubits, spec.layers)
    zero = zero_state(spec.n_qubits).amplitudes
    states_i = _circuit.forward_states(ops, theta_i, zero, spec.n_qubits)
    states_j = _circuit.forward_states(ops, theta_j, zero, spec.n_qubits)
    psi_i, psi_j = states_i[-1], states_j[-1]
    c = np.vdot(psi_i, psi_j)
    fid = float(abs(c) ** 2)
    dc_dtheta_j = _circuit.overlap_param_grad(ops, theta_j, states_j, psi_i, spec.n_qubits, n_theta)
    g_theta_j = 2.0 * np.real(np.conj(c) * dc_dtheta_j)
    dcb_dtheta_i = _circuit.overlap_param_grad(ops, theta_i, states_i, psi_j, spec.n_qubits, n_theta)
    g_theta_i = 2.0 * np.real(c * dcb_dtheta_i)
    z_i = np.asarray(z_i, dtype=float)
    z_j = np.asarray(z_j, dtype=float)
    return fid, _theta_grad_to_input(spec, z_i, g_theta_i), _theta_grad_to_input(spec, z_j, g_theta_j)


def fidelity_input_grads_fd(spec: FeatureMapSpec, z_i: np.ndarray, z_j: np.ndarray, eps: float = 1e-6):
    """Central-difference fallback for fidelity_with_input_grads."""
    from .qcore import fidelity

    z_i = np.asarray(z_i, dtype=float)
    z_j = np.asarray(z_j, dtype=float)
    fid = fidelity(embed(spec, z_i), embed(spec, z_j))

    def grad_wrt(z_a, z_b, vary_first):
        g = np.zeros_like(z_a)
        for k in range(z_a.shape[0]):
            zp, zm = z_a.copy(), z_a.copy()
            zp[k] += eps
            zm[k] -= eps
            if vary_first:
                fp = fidelity(embed(spec, zp), embed(spec, z_b))
                fm = fidelity(embed(spec, zm), embed(spec, z_b))
            else:
                fp = fidelity(embed(spec, z_b), embed(spec, zp))
                fm = fidelity(embed(spec, z_b), embed(spec, zm))
            g[k] = (fp - fm) / (2 * eps)
        return g

    return fid, grad_wrt(z_i, z_j, True), grad_wrt(z_j, z_i, False)
