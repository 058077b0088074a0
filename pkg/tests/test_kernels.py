import numpy as np
import pytest

from qscreen.featuremap import FeatureMapKind, FeatureMapSpec, embed
from qscreen.kernels import (
    DegenerateDataError,
    GramMatrix,
    GramValidationError,
    KernelKind,
    fidelity_cross,
    fidelity_gram,
    linear_gram,
    load_gram,
    pauli_expectation_vector,
    pqk_cross,
    pqk_exponent_frobenius,
    pqk_exponent_pauli,
    pqk_gamma,
    pqk_gram,
    rbf_cross,
    rbf_entry,
    rbf_gram,
    save_gram,
)
from qscreen.qcore import StateVector, reduced_density_1q, zero_state


def random_state(n_qubits, rng):
    amps = rng.normal(size=2**n_qubits) + 1j * rng.normal(size=2**n_qubits)
    return StateVector(n_qubits, amps / np.linalg.norm(amps))


class TestGramValidation:
    def test_asymmetric_rejected(self):
        bad = np.array([[1.0, 0.5], [0.2, 1.0]])
        with pytest.raises(GramValidationError, match="asymmetry"):
            GramMatrix(2, bad, KernelKind.RBF)

    def test_bad_diagonal_rejected_for_normalized_kinds(self):
        bad = np.array([[0.7, 0.1], [0.1, 1.0]])
        with pytest.raises(GramValidationError, match="diagonal"):
            GramMatrix(2, bad, KernelKind.FIDELITY)

    def test_linear_kernel_allows_free_diagonal(self):
        ok = np.array([[4.0, 0.0], [0.0, 9.0]])
        GramMatrix(2, ok, KernelKind.LINEAR)

    def test_indefinite_rejected(self):
        bad = np.array([[1.0, 2.0], [2.0, 1.0]])  # eigenvalues 3, -1
        with pytest.raises(GramValidationError, match="eigenvalue"):
            GramMatrix(2, bad, KernelKind.RBF)


class TestFidelityGram:
    def test_identical_states_give_all_ones(self):
        s = random_state(2, np.random.default_rng(3))
        gram = fidelity_gram([s, s, s])
        np.testing.assert_allclose(gram.entries, np.ones((3, 3)), atol=1e-12)

    def test_orthogonal_states(self):
        a = StateVector(1, np.array([1, 0], dtype=complex))
        b = StateVector(1, np.array([0, 1], dtype=complex))
        gram = fidelity_gram([a, b])
        np.testing.assert_allclose(gram.entries, np.eye(2), atol=1e-12)

    def test_matches_elementwise_inner_products(self):
        rng = np.random.default_rng(5)
        states = [random_state(2, rng) for _ in range(3)]
        gram = fidelity_gram(states)
        for i in range(3):
            for j in range(3):
                expected = abs(np.vdot(states[i].amplitudes, states[j].amplitudes)) ** 2
                assert gram.entries[i, j] == pytest.approx(expected, abs=1e-12)

    def test_unit_diagonal_tight(self):
        rng = np.random.default_rng(7)
        gram = fidelity_gram([random_state(3, rng) for _ in range(6)])
        np.testing.assert_allclose(np.diag(gram.entries), 1.0, atol=1e-12)

    def test_entries_bounded(self):
        rng = np.random.default_rng(9)
        gram = fidelity_gram([random_state(2, rng) for _ in range(8)])
        assert gram.entries.min() >= 0.0
        assert gram.entries.max() <= 1.0 + 1e-12

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="at least one"):
            fidelity_gram([])

    def test_mixed_dimensions_rejected(self):
        with pytest.raises(ValueError, match="mixed"):
            fidelity_gram([zero_state(1), zero_state(2)])

    def test_cross_block(self):
        rng = np.random.default_rng(11)
        a = [random_state(2, rng) for _ in range(3)]
        b = [random_state(2, rng) for _ in range(2)]
        block = fidelity_cross(a, b)
        assert block.shape == (3, 2)
        for i in range(3):
            for j in range(2):
                expected = abs(np.vdot(a[i].amplitudes, b[j].amplitudes)) ** 2
                assert block[i, j] == pytest.approx(expected, abs=1e-12)


class TestRBF:
    def test_equal_inputs_give_one(self):
        h = np.array([0.3, -2.0, 5.5])
        assert rbf_entry(h, h, 1.0) == 1.0

    def test_unit_distance_gamma_one(self):
        assert rbf_entry(np.array([0.0]), np.array([1.0]), 1.0) == pytest.approx(np.exp(-1), rel=1e-12)

    def test_distance_two_gamma_half(self):
        h_i = np.array([0.0, 0.0])
        h_j = np.array([1.0, 1.0])
        assert rbf_entry(h_i, h_j, 0.5) == pytest.approx(np.exp(-1), rel=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            rbf_entry(np.zeros(2), np.zeros(3))

    def test_nonpositive_gamma(self):
        with pytest.raises(ValueError, match="gamma"):
            rbf_entry(np.zeros(2), np.zeros(2), 0.0)

    def test_gram_matches_entries(self):
        rng = np.random.default_rng(13)
        feats = rng.normal(size=(5, 3))
        gram = rbf_gram(feats, gamma=0.7)
        for i in range(5):
            for j in range(5):
                assert gram.entries[i, j] == pytest.approx(rbf_entry(feats[i], feats[j], 0.7), abs=1e-12)

    def test_cross_matches_entries(self):
        rng = np.random.default_rng(17)
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(2, 4))
        block = rbf_cross(a, b, gamma=1.3)
        for i in range(3):
            for j in range(2):
                assert block[i, j] == pytest.approx(rbf_entry(a[i], b[j], 1.3), abs=1e-12)


class TestLinearGram:
    def test_unit_vector_self(self):
        gram = linear_gram(np.array([[1.0, 0.0]]))
        assert gram.entries[0, 0] == 1.0

    def test_orthogonal_unit_vectors(self):
        gram = linear_gram(np.array([[1.0, 0.0], [0.0, 1.0]]))
        np.testing.assert_allclose(gram.entries, np.eye(2), atol=1e-15)

    def test_matches_naive_double_loop(self):
        rng = np.random.default_rng(19)
        feats = rng.normal(size=(3, 5))
        gram = linear_gram(feats)
        for i in range(3):
            for j in range(3):
                assert gram.entries[i, j] == pytest.approx(float(feats[i] @ feats[j]), rel=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="non-empty"):
            linear_gram(np.zeros((0, 3)))


class TestPQKGamma:
    def test_unit_variance(self):
        # two samples at +1/-1 have population variance 1
        exps = np.array([[1.0] * 6, [-1.0] * 6])
        assert pqk_gamma(exps, d=39) == pytest.approx(1 / 39, rel=1e-12)

    def test_half_variance(self):
        exps = np.array([[0.5] * 4, [-0.5] * 4, [0.5] * 4, [-0.5] * 4])
        # population variance of +-0.5 values is 0.25... scaled case below
        assert pqk_gamma(exps, d=4) == pytest.approx(1.0 / (0.25 * 4), rel=1e-12)

    def test_explicit_half_variance_case(self):
        vals = np.array([[np.sqrt(0.5)], [-np.sqrt(0.5)]])
        assert pqk_gamma(vals, d=4) == pytest.approx(0.5, rel=1e-12)

    def test_degenerate_rejected(self):
        exps = np.ones((4, 6))
        with pytest.raises(DegenerateDataError):
            pqk_gamma(exps, d=4)

    def test_mean_per_observable_mode(self):
        rng = np.random.default_rng(23)
        exps = rng.uniform(-1, 1, size=(10, 6))
        expected = 1.0 / (np.mean(np.var(exps, axis=0)) * 8)
        assert pqk_gamma(exps, d=8, mode="mean_per_observable") == pytest.approx(expected, rel=1e-12)


class TestPQKGram:
    def test_identical_states_give_one(self):
        s = random_state(2, np.random.default_rng(29))
        gram = pqk_gram([s, s], gamma=1.0)
        np.testing.assert_allclose(gram.entries, np.ones((2, 2)), atol=1e-12)

    def test_one_qubit_orthogonal_states(self):
        a = StateVector(1, np.array([1, 0], dtype=complex))
        b = StateVector(1, np.array([0, 1], dtype=complex))
        gram = pqk_gram([a, b], gamma=1.0)
        # ||diag(1,-1)||_F^2 = 2
        assert gram.entries[0, 1] == pytest.approx(np.exp(-2), rel=1e-12)

    def test_dual_formula_equivalence(self):
        rng = np.random.default_rng(31)
        for _ in range(20):
            a, b = random_state(2, rng), random_state(2, rng)
            rdms_a = np.stack([reduced_density_1q(a, q).entries for q in range(2)])
            rdms_b = np.stack([reduced_density_1q(b, q).entries for q in range(2)])
            frob = pqk_exponent_frobenius(rdms_a, rdms_b)
            pauli = pqk_exponent_pauli(pauli_expectation_vector(a), pauli_expectation_vector(b))
            assert frob == pytest.approx(pauli, abs=1e-10)

    def test_gram_psd_and_unit_diagonal(self):
        rng = np.random.default_rng(37)
        states = [random_state(3, rng) for _ in range(10)]
        gram = pqk_gram(states, gamma=0.8)
        np.testing.assert_allclose(np.diag(gram.entries), 1.0, atol=1e-12)
        assert np.linalg.eigvalsh(gram.entries).min() >= -1e-8

    def test_cross_block_consistent_with_gram(self):
        rng = np.random.default_rng(41)
        states = [random_state(2, rng) for _ in range(4)]
        gram = pqk_gram(states, gamma=1.1)
        block = pqk_cross(states, states, gamma=1.1)
        np.testing.assert_allclose(block, gram.entries, atol=1e-12)


class TestEmbeddedKernelPipelines:
    def test_zz_embedding_fidelity_gram_is_valid(self):
        rng = np.random.default_rng(43)
        spec = FeatureMapSpec(FeatureMapKind.ZZ, 4)
        states = [embed(spec, rng.uniform(-np.pi, np.pi, size=4)) for _ in range(12)]
        gram = fidelity_gram(states)
        assert gram.kernel_kind is KernelKind.FIDELITY

    def test_xyz_embedding_pqk_gram_is_valid(self):
        rng = np.random.default_rng(47)
        spec = FeatureMapSpec(FeatureMapKind.XYZ, 4)
        states = [embed(spec, rng.uniform(-1, 1, size=8)) for _ in range(10)]
        vs = np.stack([pauli_expectation_vector(s) for s in states])
        gamma = pqk_gamma(vs, d=4)
        gram = pqk_gram(states, gamma=gamma)
        assert gram.params["gamma"] == pytest.approx(gamma)


class TestSerialization:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(53)
        feats = rng.normal(size=(6, 4))
        gram = rbf_gram(feats, gamma=0.9)
        path = tmp_path / "gram.bin"
        save_gram(gram, path)
        loaded = load_gram(path)
        assert loaded.kernel_kind is KernelKind.RBF
        assert loaded.size == 6
        assert loaded.params == {"gamma": 0.9}
        np.testing.assert_array_equal(loaded.entries, gram.entries)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"XXXX" + b"\x00" * 16)
        with pytest.raises(ValueError, match="magic"):
            load_gram(path)
