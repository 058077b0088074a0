"""Parameterized gate tapes with adjoint-mode differentiation.

A circuit is a flat list of ops acting on a statevector. Ops whose angle
comes from a parameter vector carry the parameter's index; the same index
may appear on many ops (weight sharing), in which case gradients
accumulate. Two reverse sweeps are provided: the derivative of an overlap
<bra|psi(theta)> (used for embedding fidelities) and the derivative of a
Z expectation (used for circuit classifiers).

States are plain complex arrays shaped (..., 2**n); a leading batch axis
is supported everywhere, with gate parameters shared across the batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .qcore import HADAMARD, PAULI, PauliAxis, _apply_1q_raw, _apply_2q_raw

_I2 = np.eye(2, dtype=complex)
_I4 = np.eye(4, dtype=complex)


@dataclass(frozen=True)
class Op:
    """One gate in a tape.

    kind: "h" | "phase1" | "phase2" | "rot" | "crot" | "cnot"
    qubits: target qubit(s); for "crot"/"cnot" the pair is (control, target).
    axis: Pauli axis for parameterized kinds.
    param: index into the parameter vector, or None for a fixed angle.
    angle: the fixed angle used when param is None.
    """

    kind: str
    qubits: tuple
    axis: PauliAxis | None = None
    param: int | None = None
    angle: float = 0.0


def _op_angle(op: Op, theta: np.ndarray) -> float:
    return float(theta[op.param]) if op.param is not None else op.angle


def _rot_matrix(axis: PauliAxis, angle: float) -> np.ndarray:
    # exp(-i angle/2 P)
    return np.cos(angle / 2) * _I2 - 1j * np.sin(angle / 2) * PAULI[axis]


def _phase1_matrix(axis: PauliAxis, angle: float) -> np.ndarray:
    # exp(+i angle P)
    return np.cos(angle) * _I2 + 1j * np.sin(angle) * PAULI[axis]


def _phase2_matrix(axis: PauliAxis, angle: float) -> np.ndarray:
    # exp(+i angle P (x) P)
    pp = np.kron(PAULI[axis], PAULI[axis])
    return np.cos(angle) * _I4 + 1j * np.sin(angle) * pp


def _crot_matrix(axis: PauliAxis, angle: float) -> np.ndarray:
    # control on the first (more significant) qubit of the 4-dim space
    out = np.eye(4, dtype=complex)
    out[2:, 2:] = _rot_matrix(axis, angle)
    return out


_CNOT = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)


def _op_matrix(op: Op, theta: np.ndarray) -> np.ndarray:
    if op.kind == "h":
        return HADAMARD
    if op.kind == "cnot":
        return _CNOT
    angle = _op_angle(op, theta)
    if op.kind == "phase1":
        return _phase1_matrix(op.axis, angle)
    if op.kind == "phase2":
        return _phase2_matrix(op.axis, angle)
    if op.kind == "rot":
        return _rot_matrix(op.axis, angle)
    if op.kind == "crot":
        return _crot_matrix(op.axis, angle)
    raise ValueError(f"unknown op kind {op.kind!r}")


def _apply_matrix(op: Op, mat: np.ndarray, amps: np.ndarray, n_qubits: int) -> np.ndarray:
    if len(op.qubits) == 1:
        return _apply_1q_raw(amps, n_qubits, op.qubits[0], mat)
    return _apply_2q_raw(amps, n_qubits, op.qubits[0], op.qubits[1], mat)


def apply_ops(ops, theta, amps, n_qubits):
    """Run the tape forward; returns the final amplitudes."""
    for op in ops:
        amps = _apply_matrix(op, _op_matrix(op, theta), amps, n_qubits)
    return amps


def forward_states(ops, theta, amps, n_qubits):
    """Run the tape forward keeping the state after every op.

    Returns a list of len(ops)+1 arrays; entry 0 is the input state.
    """
    states = [amps]
    for op in ops:
        amps = _apply_matrix(op, _op_matrix(op, theta), amps, n_qubits)
        states.append(amps)
    return states


def _apply_generator(op: Op, amps: np.ndarray, n_qubits: int) -> np.ndarray:
    """Apply d(U)/d(angle) * U^-1 to a state, i.e. the generator factor:

    phase1/phase2: +i P          rot: -(i/2) P        crot: -(i/2) |1><1| (x) P
    """
    if op.kind in ("phase1", "rot"):
        out = _apply_1q_raw(amps, n_qubits, op.qubits[0], PAULI[op.axis])
        return 1j * out if op.kind == "phase1" else (-0.5j) * out
    if op.kind == "phase2":
        pp = np.kron(PAULI[op.axis], PAULI[op.axis])
        return 1j * _apply_2q_raw(amps, n_qubits, op.qubits[0], op.qubits[1], pp)
    if op.kind == "crot":
        proj = np.zeros((4, 4), dtype=complex)
        proj[2:, 2:] = PAULI[op.axis]
        return -0.5j * _apply_2q_raw(amps, n_qubits, op.qubits[0], op.qubits[1], proj)
    raise ValueError(f"op kind {op.kind!r} has no parameter")


def overlap_param_grad(ops, theta, states, bra, n_qubits, n_params):
    """d <bra|psi(theta)> / d theta, as a complex vector of length n_params.

    `states` is the forward tape from forward_states; `bra` is the target
    state (ket layout; the conjugation happens inside).
    """
    grad = np.zeros(n_params, dtype=complex)
    b = bra
    for k in range(len(ops) - 1, -1, -1):
        op = ops[k]
        if op.param is not None:
            gs = _apply_generator(op, states[k + 1], n_qubits)
            grad[op.param] += np.vdot(b, gs)
        mat = _op_matrix(op, theta)
        b = _apply_matrix(op, mat.conj().T, b, n_qubits)
    return grad


def _apply_z(amps: np.ndarray, n_qubits: int, qubit: int) -> np.ndarray:
    return amps * z_sign_vector(n_qubits, qubit)


def z_sign_vector(n_qubits: int, qubit: int) -> np.ndarray:
    """Diagonal of Z_qubit in the computational basis (+1/-1 per index)."""
    idx = np.arange(2**n_qubits)
    bits = (idx >> (n_qubits - 1 - qubit)) & 1
    return 1.0 - 2.0 * bits


def z_expectations(amps: np.ndarray, n_qubits: int, qubit: int) -> np.ndarray:
    """<Z_qubit> per batch row for amps shaped (..., 2**n)."""
    return (np.abs(amps) ** 2) @ z_sign_vector(n_qubits, qubit)


def z_expectation_grad(ops, theta, amps0, n_qubits, readout, n_params, weights=None):
    """<Z_readout> per batch row and the weighted parameter gradient.

    For E_s = <psi_s|Z|psi_s>, returns (E, g) with
    g[a] = sum_s weights[s] * dE_s/dtheta[a]. Weights default to ones.
    """
    states = forward_states(ops, theta, amps0, n_qubits)
    final = states[-1]
    expvals = z_expectations(final, n_qubits, readout)
    b = _apply_z(final, n_qubits, readout)
    if weights is not None:
        b = b * np.asarray(weights)[..., None]
    grad = np.zeros(n_params, dtype=float)
    for k in range(len(ops) - 1, -1, -1):
        op = ops[k]
        if op.param is not None:
            gs = _apply_generator(op, states[k + 1], n_qubits)
            grad[op.param] += 2.0 * np.real(np.vdot(b, gs))
        mat = _op_matrix(op, theta)
        b = _apply_matrix(op, mat.conj().T, b, n_qubits)
    return expvals, grad
