"""Dense statevector and density-matrix primitives.

Qubit ordering convention (fixed for the whole package): qubit 0 is the
most significant bit of the amplitude index, so the basis state
|q0 q1 ... q_{n-1}> lives at index q0*2^(n-1) + q1*2^(n-2) + ... + q_{n-1}.
Equivalently, reshaping an amplitude vector to shape (2,)*n puts qubit k
on axis k.

All values are immutable after construction and all operations are pure
functions, so everything here is safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

NORM_ATOL = 1e-10
UNITARY_ATOL = 1e-10
HERMITIAN_ATOL = 1e-10
TRACE_ATOL = 1e-10
EIGENVALUE_FLOOR = -1e-9


class PauliAxis(Enum):
    X = "X"
    Y = "Y"
    Z = "Z"


PAULI = {
    PauliAxis.X: np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex),
    PauliAxis.Y: np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex),
    PauliAxis.Z: np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex),
}

HADAMARD = np.array([[1.0, 1.0], [1.0, -1.0]], dtype=complex) / np.sqrt(2.0)


@dataclass(frozen=True)
class StateVector:
    """Pure n-qubit state as a dense complex amplitude vector."""

    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        if self.n_qubits < 1:
            raise ValueError(f"n_qubits must be >= 1, got {self.n_qubits}")
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.ndim != 1 or amps.shape[0] != 2**self.n_qubits:
            raise ValueError(
                f"amplitude vector must have length 2**{self.n_qubits}, got shape {amps.shape}"
            )
        norm = np.linalg.norm(amps)
        if abs(norm - 1.0) > NORM_ATOL:
            raise ValueError(f"state norm {norm!r} deviates from 1 by more than {NORM_ATOL}")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)


@dataclass(frozen=True)
class DensityMatrix:
    """Mixed n-qubit state; Hermitian, unit trace, positive semidefinite."""

    n_qubits: int
    entries: np.ndarray

    def __post_init__(self):
        if self.n_qubits < 1:
            raise ValueError(f"n_qubits must be >= 1, got {self.n_qubits}")
        mat = np.asarray(self.entries, dtype=complex)
        dim = 2**self.n_qubits
        if mat.shape != (dim, dim):
            raise ValueError(f"entries must be {dim}x{dim}, got {mat.shape}")
        if np.max(np.abs(mat - mat.conj().T)) > HERMITIAN_ATOL:
            raise ValueError("density matrix is not Hermitian within tolerance")
        trace = np.trace(mat).real
        if abs(trace - 1.0) > TRACE_ATOL:
            raise ValueError(f"density matrix trace {trace!r} deviates from 1")
        eigs = np.linalg.eigvalsh((mat + mat.conj().T) / 2.0)
        if eigs.min() < EIGENVALUE_FLOOR:
            raise ValueError(f"density matrix has eigenvalue {eigs.min()!r} below {EIGENVALUE_FLOOR}")
        mat.setflags(write=False)
        object.__setattr__(self, "entries", mat)


def zero_state(n_qubits: int) -> StateVector:
    """|0...0> on n_qubits."""
    amps = np.zeros(2**n_qubits, dtype=complex)
    amps[0] = 1.0
    return StateVector(n_qubits, amps)


def _require_qubit(n_qubits: int, qubit: int) -> None:
    if not 0 <= qubit < n_qubits:
        raise ValueError(f"qubit index {qubit} out of range for {n_qubits}-qubit state")


def _require_unitary(gate: np.ndarray, dim: int) -> np.ndarray:
    gate = np.asarray(gate, dtype=complex)
    if gate.shape != (dim, dim):
        raise ValueError(f"gate must be {dim}x{dim}, got {gate.shape}")
    if np.max(np.abs(gate.conj().T @ gate - np.eye(dim))) > UNITARY_ATOL:
        raise ValueError("gate is not unitary within tolerance")
    return gate


def _apply_1q_raw(amps: np.ndarray, n_qubits: int, qubit: int, gate: np.ndarray) -> np.ndarray:
    """Apply a 2x2 matrix to one qubit of amps shaped (..., 2**n). No checks."""
    shape = amps.shape
    axis = len(shape) - 1 + qubit
    t = amps.reshape(shape[:-1] + (2,) * n_qubits)
    t = np.tensordot(t, gate, axes=([axis], [1]))
    t = np.moveaxis(t, -1, axis)
    return np.ascontiguousarray(t).reshape(shape)


def _apply_2q_raw(
    amps: np.ndarray, n_qubits: int, qubit_a: int, qubit_b: int, gate: np.ndarray
) -> np.ndarray:
    """Apply a 4x4 matrix to qubits (a, b); a indexes the more significant
    bit of the gate's 2-bit space. amps shaped (..., 2**n). No checks."""
    shape = amps.shape
    base = len(shape) - 1
    t = amps.reshape(shape[:-1] + (2,) * n_qubits)
    g = gate.reshape(2, 2, 2, 2)  # [a_out, b_out, a_in, b_in]
    t = np.tensordot(t, g, axes=([base + qubit_a, base + qubit_b], [2, 3]))
    t = np.moveaxis(t, (-2, -1), (base + qubit_a, base + qubit_b))
    return np.ascontiguousarray(t).reshape(shape)


def apply_one_qubit(state: StateVector, qubit: int, gate: np.ndarray) -> StateVector:
    """Apply a single-qubit unitary; preserves the norm."""
    _require_qubit(state.n_qubits, qubit)
    gate = _require_unitary(gate, 2)
    return StateVector(state.n_qubits, _apply_1q_raw(state.amplitudes, state.n_qubits, qubit, gate))


def apply_two_qubit(state: StateVector, qubit_a: int, qubit_b: int, gate: np.ndarray) -> StateVector:
    """Apply a two-qubit unitary to distinct qubits (a, b).

    The gate's 4-dimensional space is indexed with qubit_a as the more
    significant bit, i.e. the column ordering |a b> = |00>, |01>, |10>, |11>.
    """
    _require_qubit(state.n_qubits, qubit_a)
    _require_qubit(state.n_qubits, qubit_b)
    if qubit_a == qubit_b:
        raise ValueError("two-qubit gate needs distinct qubits")
    gate = _require_unitary(gate, 4)
    return StateVector(
        state.n_qubits, _apply_2q_raw(state.amplitudes, state.n_qubits, qubit_a, qubit_b, gate)
    )


def fidelity(a: StateVector, b: StateVector) -> float:
    """|<a|b>|^2, the squared overlap of two pure states."""
    if a.n_qubits != b.n_qubits:
        raise ValueError(f"dimension mismatch: {a.n_qubits} vs {b.n_qubits} qubits")
    return float(abs(np.vdot(a.amplitudes, b.amplitudes)) ** 2)


def reduced_density_1q(state: StateVector, keep: int) -> DensityMatrix:
    """Trace out every qubit except `keep`, returning its 2x2 density matrix."""
    _require_qubit(state.n_qubits, keep)
    t = state.amplitudes.reshape((2,) * state.n_qubits)
    t = np.moveaxis(t, keep, 0).reshape(2, -1)
    rho = t @ t.conj().T
    rho = (rho + rho.conj().T) / 2.0
    return DensityMatrix(1, rho)


def trace_distance(rho: DensityMatrix, sigma: DensityMatrix) -> float:
    """(1/2) * sum of |eigenvalues| of (rho - sigma)."""
    if rho.n_qubits != sigma.n_qubits:
        raise ValueError(f"dimension mismatch: {rho.n_qubits} vs {sigma.n_qubits} qubits")
    diff = rho.entries - sigma.entries
    diff = (diff + diff.conj().T) / 2.0  # suppress float drift before eigh
    eigs = np.linalg.eigvalsh(diff)
    return float(0.5 * np.sum(np.abs(eigs)))


def pauli_expectation(state: StateVector, qubit: int, axis: PauliAxis) -> float:
    """<P_qubit> for P in {X, Y, Z}, via the 1-qubit reduced density matrix."""
    rho = reduced_density_1q(state, qubit)
    val = np.trace(PAULI[axis] @ rho.entries)
    if abs(val.imag) > 1e-10:
        raise ValueError(f"expectation has imaginary residue {val.imag!r}")
    return float(val.real)
