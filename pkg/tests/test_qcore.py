import numpy as np
import pytest

from qscreen.qcore import (
    HADAMARD,
    PAULI,
    DensityMatrix,
    PauliAxis,
    StateVector,
    apply_one_qubit,
    apply_two_qubit,
    fidelity,
    pauli_expectation,
    reduced_density_1q,
    trace_distance,
    zero_state,
)

X = PAULI[PauliAxis.X]
Z = PAULI[PauliAxis.Z]

CNOT = np.array(
    [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]],
    dtype=complex,
)


def random_state(n_qubits, rng):
    amps = rng.normal(size=2**n_qubits) + 1j * rng.normal(size=2**n_qubits)
    return StateVector(n_qubits, amps / np.linalg.norm(amps))


def random_unitary(dim, rng):
    m = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    q, r = np.linalg.qr(m)
    return q * (np.diag(r) / np.abs(np.diag(r)))


class TestStateVector:
    def test_rejects_wrong_length(self):
        with pytest.raises(ValueError, match="length"):
            StateVector(2, np.array([1.0, 0.0, 0.0]))

    def test_rejects_unnormalized(self):
        with pytest.raises(ValueError, match="norm"):
            StateVector(1, np.array([1.0, 1.0]))

    def test_amplitudes_are_read_only(self):
        s = zero_state(2)
        with pytest.raises(ValueError):
            s.amplitudes[0] = 0.0


class TestApplyOneQubit:
    def test_hadamard_on_zero(self):
        s = apply_one_qubit(zero_state(1), 0, HADAMARD)
        np.testing.assert_allclose(s.amplitudes, [1 / np.sqrt(2), 1 / np.sqrt(2)], atol=1e-12)

    def test_x_flips_zero(self):
        s = apply_one_qubit(zero_state(1), 0, X)
        np.testing.assert_allclose(s.amplitudes, [0, 1], atol=1e-12)

    def test_rz_zero_is_identity_up_to_phase(self):
        rng = np.random.default_rng(5)
        s = random_state(3, rng)
        rz0 = np.diag([np.exp(-0.0j), np.exp(0.0j)])
        out = apply_one_qubit(s, 1, rz0)
        assert abs(abs(np.vdot(out.amplitudes, s.amplitudes)) - 1.0) < 1e-12

    def test_qubit_ordering_msb_first(self):
        # X on qubit 0 of |00> must set the amplitude at index 2 (binary 10).
        s = apply_one_qubit(zero_state(2), 0, X)
        np.testing.assert_allclose(s.amplitudes, [0, 0, 1, 0], atol=1e-12)

    def test_out_of_range_qubit(self):
        with pytest.raises(ValueError, match="out of range"):
            apply_one_qubit(zero_state(2), 2, X)

    def test_non_unitary_rejected(self):
        with pytest.raises(ValueError, match="unitary"):
            apply_one_qubit(zero_state(1), 0, np.array([[1.0, 0.0], [0.0, 2.0]]))

    def test_norm_preserved_on_random_gates(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            n = rng.integers(1, 5)
            s = random_state(n, rng)
            out = apply_one_qubit(s, int(rng.integers(n)), random_unitary(2, rng))
            assert abs(np.linalg.norm(out.amplitudes) - 1.0) < 1e-12


class TestApplyTwoQubit:
    def test_cnot_control_first(self):
        # |10> -> |11>
        s = StateVector(2, np.array([0, 0, 1, 0], dtype=complex))
        out = apply_two_qubit(s, 0, 1, CNOT)
        np.testing.assert_allclose(out.amplitudes, [0, 0, 0, 1], atol=1e-12)

    def test_cnot_on_00_does_nothing(self):
        out = apply_two_qubit(zero_state(2), 0, 1, CNOT)
        np.testing.assert_allclose(out.amplitudes, [1, 0, 0, 0], atol=1e-12)

    def test_zz_phase_on_00(self):
        phi = np.pi / 4
        gate = np.diag(np.exp(1j * phi * np.array([1, -1, -1, 1])))
        out = apply_two_qubit(zero_state(2), 0, 1, gate)
        assert abs(out.amplitudes[0] - np.exp(1j * phi)) < 1e-12
        assert abs(np.linalg.norm(out.amplitudes) - 1.0) < 1e-12

    def test_qubit_order_in_gate_basis(self):
        # CNOT with control=1, target=0 acting on |01> (index 1) gives |11>.
        s = StateVector(2, np.array([0, 1, 0, 0], dtype=complex))
        out = apply_two_qubit(s, 1, 0, CNOT)
        np.testing.assert_allclose(out.amplitudes, [0, 0, 0, 1], atol=1e-12)

    def test_equal_indices_rejected(self):
        with pytest.raises(ValueError, match="distinct"):
            apply_two_qubit(zero_state(2), 1, 1, CNOT)

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError, match="out of range"):
            apply_two_qubit(zero_state(2), 0, 2, CNOT)

    def test_norm_preserved_on_random_gates(self):
        rng = np.random.default_rng(13)
        for _ in range(200):
            n = rng.integers(2, 5)
            qa, qb = rng.choice(n, size=2, replace=False)
            s = random_state(n, rng)
            out = apply_two_qubit(s, int(qa), int(qb), random_unitary(4, rng))
            assert abs(np.linalg.norm(out.amplitudes) - 1.0) < 1e-12

    def test_agrees_with_kron_on_adjacent_qubits(self):
        rng = np.random.default_rng(17)
        gate = random_unitary(4, rng)
        s = random_state(2, rng)
        expected = gate @ s.amplitudes
        out = apply_two_qubit(s, 0, 1, gate)
        np.testing.assert_allclose(out.amplitudes, expected, atol=1e-12)


class TestFidelity:
    def test_self_fidelity_is_one(self):
        s = random_state(3, np.random.default_rng(19))
        assert fidelity(s, s) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal_states(self):
        a = StateVector(1, np.array([1, 0], dtype=complex))
        b = StateVector(1, np.array([0, 1], dtype=complex))
        assert fidelity(a, b) == 0.0

    def test_zero_vs_plus(self):
        plus = apply_one_qubit(zero_state(1), 0, HADAMARD)
        assert fidelity(zero_state(1), plus) == pytest.approx(0.5, abs=1e-12)

    def test_symmetric_and_bounded(self):
        rng = np.random.default_rng(23)
        for _ in range(100):
            a, b = random_state(2, rng), random_state(2, rng)
            assert fidelity(a, b) == fidelity(b, a)
            assert 0.0 <= fidelity(a, b) <= 1.0 + 1e-12

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            fidelity(zero_state(1), zero_state(2))


def oracle_reduced_density(state, keep):
    """Independent partial trace: build the full outer product and sum the
    diagonal blocks over all traced-out qubits."""
    n = state.n_qubits
    full = np.outer(state.amplitudes, state.amplitudes.conj())
    rho = np.zeros((2, 2), dtype=complex)
    for i in range(2**n):
        for j in range(2**n):
            bi = (i >> (n - 1 - keep)) & 1
            bj = (j >> (n - 1 - keep)) & 1
            rest_i = i & ~(1 << (n - 1 - keep))
            rest_j = j & ~(1 << (n - 1 - keep))
            if rest_i == rest_j:
                rho[bi, bj] += full[i, j]
    return rho


class TestReducedDensity:
    def test_product_state(self):
        rho = reduced_density_1q(zero_state(2), 0)
        np.testing.assert_allclose(rho.entries, [[1, 0], [0, 0]], atol=1e-12)

    def test_bell_state_is_maximally_mixed(self):
        bell = StateVector(2, np.array([1, 0, 0, 1], dtype=complex) / np.sqrt(2))
        for keep in (0, 1):
            rho = reduced_density_1q(bell, keep)
            np.testing.assert_allclose(rho.entries, np.eye(2) / 2, atol=1e-12)

    def test_matches_outer_product_oracle(self):
        rng = np.random.default_rng(29)
        for n in (2, 3):
            for _ in range(20):
                s = random_state(n, rng)
                for keep in range(n):
                    got = reduced_density_1q(s, keep).entries
                    np.testing.assert_allclose(got, oracle_reduced_density(s, keep), atol=1e-10)

    def test_out_of_range(self):
        with pytest.raises(ValueError, match="out of range"):
            reduced_density_1q(zero_state(2), 5)


def random_density(n_qubits, rng, mixture=3):
    dim = 2**n_qubits
    rho = np.zeros((dim, dim), dtype=complex)
    w = rng.dirichlet(np.ones(mixture))
    for k in range(mixture):
        v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
        v /= np.linalg.norm(v)
        rho += w[k] * np.outer(v, v.conj())
    return DensityMatrix(n_qubits, rho)


class TestTraceDistance:
    def test_identical_states(self):
        rho = random_density(2, np.random.default_rng(31))
        assert trace_distance(rho, rho) == pytest.approx(0.0, abs=1e-12)

    def test_orthogonal_pure_states(self):
        rho = DensityMatrix(1, np.diag([1.0, 0.0]).astype(complex))
        sigma = DensityMatrix(1, np.diag([0.0, 1.0]).astype(complex))
        assert trace_distance(rho, sigma) == pytest.approx(1.0, abs=1e-12)

    def test_pure_vs_maximally_mixed(self):
        rho = DensityMatrix(1, np.diag([1.0, 0.0]).astype(complex))
        sigma = DensityMatrix(1, np.eye(2, dtype=complex) / 2)
        assert trace_distance(rho, sigma) == pytest.approx(0.5, abs=1e-12)

    def test_triangle_inequality(self):
        rng = np.random.default_rng(37)
        for _ in range(50):
            a, b, c = (random_density(2, rng) for _ in range(3))
            assert trace_distance(a, c) <= trace_distance(a, b) + trace_distance(b, c) + 1e-9

    def test_bounded(self):
        rng = np.random.default_rng(41)
        for _ in range(50):
            a, b = random_density(3, rng), random_density(3, rng)
            d = trace_distance(a, b)
            assert -1e-9 <= d <= 1.0 + 1e-9

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            trace_distance(random_density(1, np.random.default_rng(1)), random_density(2, np.random.default_rng(2)))


class TestPauliExpectation:
    def test_zero_state_z(self):
        assert pauli_expectation(zero_state(1), 0, PauliAxis.Z) == pytest.approx(1.0, abs=1e-12)

    def test_plus_state_x(self):
        plus = apply_one_qubit(zero_state(1), 0, HADAMARD)
        assert pauli_expectation(plus, 0, PauliAxis.X) == pytest.approx(1.0, abs=1e-12)

    def test_plus_state_z(self):
        plus = apply_one_qubit(zero_state(1), 0, HADAMARD)
        assert pauli_expectation(plus, 0, PauliAxis.Z) == pytest.approx(0.0, abs=1e-12)

    def test_bounded_on_random_states(self):
        rng = np.random.default_rng(43)
        for _ in range(100):
            s = random_state(3, rng)
            for axis in PauliAxis:
                v = pauli_expectation(s, int(rng.integers(3)), axis)
                assert -1.0 - 1e-12 <= v <= 1.0 + 1e-12


class TestFrobeniusPauliBridge:
    def test_reduced_difference_norm_equals_half_pauli_gap(self):
        # ||rho_a - rho_b||_F^2 == (1/2) * sum_P (<P>_a - <P>_b)^2 for 1-qubit
        # reduced states; ties the density-matrix picture to Pauli data.
        rng = np.random.default_rng(47)
        for _ in range(50):
            n = int(rng.integers(1, 4))
            a, b = random_state(n, rng), random_state(n, rng)
            q = int(rng.integers(n))
            ra, rb = reduced_density_1q(a, q).entries, reduced_density_1q(b, q).entries
            frob = np.sum(np.abs(ra - rb) ** 2)
            gap = sum(
                (pauli_expectation(a, q, axis) - pauli_expectation(b, q, axis)) ** 2
                for axis in PauliAxis
            )
            assert frob == pytest.approx(0.5 * gap, abs=1e-10)


class TestDensityMatrixValidation:
    def test_rejects_non_hermitian(self):
        with pytest.raises(ValueError, match="Hermitian"):
            DensityMatrix(1, np.array([[0.5, 0.5], [0.0, 0.5]], dtype=complex))

    def test_rejects_wrong_trace(self):
        with pytest.raises(ValueError, match="trace"):
            DensityMatrix(1, np.eye(2, dtype=complex))

    def test_rejects_negative_eigenvalues(self):
        with pytest.raises(ValueError, match="eigenvalue"):
            DensityMatrix(1, np.diag([1.5, -0.5]).astype(complex))
