import numpy as np
import pytest

from microflow import casorati


def rng(seed=0):
    return np.random.default_rng(seed)


def crandn(r, shape, scale=1.0):
    return scale * (r.standard_normal(shape) + 1j * r.standard_normal(shape))


class TestToCasorati:
    def test_degenerate_spatial_dims(self):
        seq = np.array([1 + 1j, 2.0, 3 - 2j]).reshape(1, 1, 3)
        m = casorati.to_casorati(seq)
        assert m.shape == (1, 3)
        assert np.array_equal(m, np.array([[1 + 1j, 2.0, 3 - 2j]]))

    def test_single_frame_column_major(self):
        p, q, r, s = 1 + 0j, 2 + 0j, 3 + 0j, 4 + 0j
        frame = np.array([[p, q], [r, s]]).reshape(2, 2, 1)
        m = casorati.to_casorati(frame)
        assert m.shape == (4, 1)
        # axial (first) index fastest
        assert np.array_equal(m[:, 0], np.array([p, r, q, s]))

    def test_round_trip_bit_exact(self):
        x = crandn(rng(1), (4, 3, 5))
        back = casorati.from_casorati(casorati.to_casorati(x), 4, 3)
        assert back.shape == x.shape
        assert np.array_equal(back, x)

    def test_rejects_wrong_rank(self):
        with pytest.raises(ValueError):
            casorati.to_casorati(np.zeros((4, 3)))


class TestFromCasorati:
    def test_row_vector(self):
        seq = casorati.from_casorati(np.array([[1j, 2j, 3j]]), 1, 1)
        assert seq.shape == (1, 1, 3)
        assert np.array_equal(seq[0, 0, :], np.array([1j, 2j, 3j]))

    def test_column_unpacks_axial_fastest(self):
        p, q, r, s = 5 + 1j, 6 + 2j, 7 + 3j, 8 + 4j
        seq = casorati.from_casorati(np.array([[p], [r], [q], [s]]), 2, 2)
        assert np.array_equal(seq[:, :, 0], np.array([[p, q], [r, s]]))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            casorati.from_casorati(np.zeros((5, 3), dtype=complex), 2, 2)

    def test_round_trip_other_shape(self):
        x = crandn(rng(2), (6, 2, 4))
        assert np.array_equal(casorati.from_casorati(casorati.to_casorati(x), 6, 2), x)


class TestOrthonormalColumns:
    def test_already_orthonormal_up_to_phase(self):
        r = rng(3)
        q0, _ = np.linalg.qr(crandn(r, (7, 4)))
        extra = crandn(r, (7, 2))
        m = np.concatenate([q0, extra], axis=1)
        q = casorati.orthonormal_columns(m, 4)
        # each output column matches the input column up to a unit phase
        for j in range(4):
            assert abs(abs(np.vdot(q[:, j], q0[:, j])) - 1.0) < 1e-12

    def test_single_column_normalization(self):
        c = np.array([3.0, 4.0j])
        q = casorati.orthonormal_columns(c.reshape(2, 1), 1)
        assert np.allclose(np.abs(q[:, 0]), np.array([0.6, 0.8]), atol=1e-15)
        assert abs(np.linalg.norm(q[:, 0]) - 1.0) < 1e-14

    def test_gram_identity_and_projector(self):
        m = crandn(rng(4), (8, 5))
        q = casorati.orthonormal_columns(m, 3)
        gram = q.conj().T @ q
        assert np.linalg.norm(gram - np.eye(3)) <= 1e-12
        # independent rank factorization of the same column block via SVD
        u, s, vh = np.linalg.svd(m[:, :3], full_matrices=False)
        p_ref = u @ u.conj().T
        p_q = q @ q.conj().T
        assert np.linalg.norm(p_q - p_ref) <= 1e-10

    def test_rank_deficient_reported(self):
        r = rng(5)
        col = crandn(r, (6, 1))
        m = np.concatenate([col, 2 * col, crandn(r, (6, 2))], axis=1)
        with pytest.raises(casorati.SolverError):
            casorati.orthonormal_columns(m, 2)

    def test_d_out_of_range(self):
        with pytest.raises(ValueError):
            casorati.orthonormal_columns(np.eye(3), 4)


class TestHermitianSolve:
    def test_identity(self):
        rhs = crandn(rng(6), (4, 3))
        x = casorati.hermitian_solve(np.eye(4), rhs)
        assert np.allclose(x, rhs, rtol=0, atol=1e-14)

    def test_scaled_identity(self):
        rhs = crandn(rng(7), (4, 2))
        x = casorati.hermitian_solve(2.0 * np.eye(4), rhs)
        assert np.allclose(x, rhs / 2.0, rtol=0, atol=1e-14)

    def test_multiply_back_residual(self):
        r = rng(8)
        g = crandn(r, (5, 5))
        a = g.conj().T @ g + 0.1 * np.eye(5)
        rhs = crandn(r, (5, 4))
        x = casorati.hermitian_solve(a, rhs)
        assert np.linalg.norm(a @ x - rhs) <= 1e-10 * np.linalg.norm(rhs)

    def test_indefinite_rejected_with_diagnostic(self):
        a = np.diag([1.0, -1.0, 2.0])
        with pytest.raises(casorati.SolverError, match="definite"):
            casorati.hermitian_solve(a, np.ones((3, 1)))


class TestSvd:
    def test_diagonal(self):
        u, s, v = casorati.svd(np.diag([3.0, 1.0]).astype(complex))
        assert np.allclose(s, [3.0, 1.0], atol=1e-14)

    def test_rank_one(self):
        r = rng(9)
        a = crandn(r, (5, 1))
        b = crandn(r, (3, 1))
        m = a @ b.conj().T
        _, s, _ = casorati.svd(m)
        assert abs(s[0] - np.linalg.norm(a) * np.linalg.norm(b)) < 1e-12
        assert np.all(s[1:] < 1e-12)

    def test_reconstruction_and_orthonormality(self):
        m = crandn(rng(10), (6, 4))
        u, s, v = casorati.svd(m)
        assert u.shape == (6, 4) and v.shape == (4, 4)
        recon = u @ np.diag(s) @ v.conj().T
        assert np.linalg.norm(recon - m) <= 1e-10 * np.linalg.norm(m)
        assert np.all(np.diff(s) <= 1e-15)
        assert np.all(s >= 0)
        assert np.linalg.norm(u.conj().T @ u - np.eye(4)) < 1e-12
        assert np.linalg.norm(v.conj().T @ v - np.eye(4)) < 1e-12
