import unittest

import numpy as np
import pytest
import scipy.linalg
import scipy.sparse as sp

from block_linalg import (
    BlockMatrix,
    BlockPartition,
    BlockVector,
    ZVector,
    build_Pt,
    build_Q,
    column_spectral_bound,
    row_block_apply,
)
from exceptions import DimensionError, ValidationError


def random_block_matrix(rng, I, J, density=0.6, max_size=2):
    partition = BlockPartition(tuple(rng.integers(1, max_size + 1, I)), tuple(rng.integers(1, max_size + 1, J)))
    pattern = rng.random((I, J)) < density
    for i in range(I):
        pattern[i, rng.integers(J)] = True
    for j in range(J):
        pattern[rng.integers(I), j] = True
    blocks = {(i, j): rng.standard_normal((partition.row_sizes[i], partition.col_sizes[j]))
              for i in range(I) for j in range(J) if pattern[i, j]}
    return BlockMatrix(partition, blocks)


class TestBlockVector(unittest.TestCase):

    def test_blocks_are_views(self):
        v = BlockVector((2, 3))
        v.block(1)[:] = 7.0
        np.testing.assert_array_equal(v.data, [0, 0, 7, 7, 7])
        v.set_block(0, [1.0, 2.0])
        np.testing.assert_array_equal(v.block(0), [1.0, 2.0])

    def test_wrong_lengths_raise(self):
        with self.assertRaises(DimensionError):
            BlockVector((2, 2), np.zeros(3))
        with self.assertRaises(DimensionError):
            BlockVector((2, 2)).set_block(1, np.zeros(3))
        with self.assertRaises(DimensionError):
            BlockVector((2,)) + BlockVector((1, 1))

    def test_expand_repeats_per_block(self):
        v = BlockVector((1, 3))
        np.testing.assert_array_equal(v.expand([2.0, 5.0]), [2, 5, 5, 5])

    def test_arithmetic_and_norms(self):
        a = BlockVector.from_blocks([np.array([3.0]), np.array([0.0, 4.0])])
        b = a * 2.0
        self.assertAlmostEqual(a.norm(), 5.0)
        np.testing.assert_allclose(a.block_norms(), [3.0, 4.0])
        self.assertAlmostEqual((b - a).dot(a), 25.0)
        np.testing.assert_array_equal((-a).data, -a.data)


class TestBlockMatrix:

    @pytest.fixture
    def matrix(self):
        partition = BlockPartition((2, 1), (1, 2, 2))
        dense = np.array([
            [1.0, 0.0, 0.0, 2.0, 0.0],
            [0.0, 0.0, 0.0, 0.0, 1.0],
            [3.0, 1.0, -1.0, 0.0, 0.0],
        ])
        return BlockMatrix.from_dense(dense, partition), dense

    def test_structure(self, matrix):
        A, _ = matrix
        assert A.degrees == (2, 2)
        assert A.neighbors(0) == (0, 2)
        assert A.neighbors(1) == (0, 1)
        assert A.column_rows(1) == (1,)

    def test_apply_matches_dense(self, matrix):
        A, dense = matrix
        x = BlockVector((1, 2, 2), np.array([1.0, -2.0, 0.5, 3.0, 4.0]))
        np.testing.assert_allclose(A.apply(x).data, dense @ x.data)
        np.testing.assert_allclose(row_block_apply(A, x, 1), (dense @ x.data)[2:])
        np.testing.assert_array_equal(A.to_dense(), dense)

    def test_column_adjoint_and_gram(self, matrix):
        A, dense = matrix
        w = BlockVector((2, 1), np.array([1.0, 2.0, -1.0]))
        np.testing.assert_allclose(A.column_adjoint(2, w), dense[:, 3:].T @ w.data)
        v = np.array([0.3, -0.7])
        np.testing.assert_allclose(A.column_gram_apply(2, v), dense[:, 3:].T @ dense[:, 3:] @ v)
        deltas = A.column_apply(0, np.array([2.0]))
        assert set(deltas) == {0, 1}
        np.testing.assert_allclose(deltas[1], [6.0])

    def test_validate_structure_rejects_zero_row(self):
        A = BlockMatrix(BlockPartition((1, 1), (1,)), {(0, 0): np.ones((1, 1))})
        with pytest.raises(ValidationError):
            A.validate_structure()

    def test_validate_structure_rejects_empty_column(self):
        A = BlockMatrix(BlockPartition((1,), (1, 1)), {(0, 0): np.ones((1, 1))})
        with pytest.raises(ValidationError):
            A.validate_structure()

    def test_block_shape_mismatch(self):
        with pytest.raises(DimensionError):
            BlockMatrix(BlockPartition((2,), (2,)), {(0, 0): np.ones((2, 3))})

    def test_scalar_gram_detection(self):
        partition = BlockPartition((3, 3), (3, 3))
        A = BlockMatrix(partition, {(0, 0): 2.0 * np.eye(3), (1, 0): sp.identity(3, format="csr"),
                                    (0, 1): np.arange(9.0).reshape(3, 3), (1, 1): np.eye(3)})
        assert A.column_gram_scalar(0) == pytest.approx(5.0)
        assert A.column_gram_scalar(1) is None

    def test_sparse_identity_columns(self):
        n = 6
        A = BlockMatrix(BlockPartition((n,), (n, n, n)), {(0, j): sp.identity(n, format="csr") for j in range(3)})
        assert A.degrees == (3,)
        assert A.column_gram_scalar(1) == pytest.approx(1.0)
        assert A.column_spectral_bound(2) == pytest.approx(1.0)
        assert A.block_spectral_bound(0, 0) == pytest.approx(1.0)

    def test_scalar_blocks_have_exact_bounds(self):
        n = 600
        A = BlockMatrix(BlockPartition((n, n), (n, n)),
                        {(0, 0): sp.identity(n, format="csr"), (0, 1): sp.identity(n, format="csr"),
                         (1, 1): 3.0 * sp.identity(n, format="csr")})
        assert A.block_spectral_bound(0, 0) == 1.0
        assert A.block_spectral_bound(1, 1) == 9.0
        assert A.block_spectral_bound(1, 0) == 0.0

    def test_spectral_bounds(self):
        rng = np.random.default_rng(3)
        small = rng.standard_normal((5, 4))
        A = BlockMatrix(BlockPartition((5,), (4,)), {(0, 0): small})
        expected = scipy.linalg.eigvalsh(small.T @ small)[-1]
        assert column_spectral_bound(A, 0) == pytest.approx(expected, rel=1e-12)

        large = rng.standard_normal((90, 80))
        B = BlockMatrix(BlockPartition((90,), (80,)), {(0, 0): large})
        expected = scipy.linalg.eigvalsh(large.T @ large)[-1]
        assert B.column_spectral_bound(0) == pytest.approx(expected, rel=1e-5)
        assert B.block_spectral_bound(0, 0) == pytest.approx(expected, rel=1e-5)


class TestQuadraticForms:

    @pytest.fixture
    def rng(self):
        return np.random.default_rng(11)

    def test_forms_are_psd_on_random_patterns(self, rng):
        checked = 0
        for _ in range(100):
            I, J = rng.integers(1, 7, 2)
            A = random_block_matrix(rng, int(I), int(J))
            K = int(rng.integers(1, J + 1))
            selected = rng.choice(J, size=K, replace=False)
            Q = build_Q(A)
            P = build_Pt(A, selected, K)
            for form in (Q, P):
                M = form.dense_matrix()
                assert scipy.linalg.eigvalsh(M)[0] >= -1e-10
            for _ in range(100):
                x = BlockVector(A.partition.col_sizes, rng.standard_normal(A.partition.n))
                z = A.z_vector(x)
                assert Q.evaluate(z) >= -1e-10 * (1.0 + x.norm() ** 2)
                assert P(z) >= -1e-10 * (1.0 + x.norm() ** 2)
                checked += 1
        assert checked == 10000

    def test_evaluate_matches_dense_matrix(self, rng):
        A = random_block_matrix(rng, 3, 4)
        Q = build_Q(A)
        M = Q.dense_matrix()
        for _ in range(5):
            entries = {key: rng.standard_normal(A.partition.row_sizes[key[0]]) for key in A.blocks}
            z = ZVector(entries)
            dense = z.to_dense(A.partition)
            assert Q.evaluate(z) == pytest.approx(dense @ M @ dense, rel=1e-10, abs=1e-12)

    def test_Pt_rejects_too_many_blocks(self, rng):
        A = random_block_matrix(rng, 2, 4)
        with pytest.raises(DimensionError):
            build_Pt(A, [0, 1, 2], 2)

    def test_Q_vanishes_on_equal_row_pieces(self):
        # z_i1 = z_i2 gives ||z||^2 - (1/2)||2 z||^2 = 0
        A = BlockMatrix(BlockPartition((2,), (2, 2)), {(0, 0): np.eye(2), (0, 1): np.eye(2)})
        z = ZVector({(0, 0): np.array([1.0, 2.0]), (0, 1): np.array([1.0, 2.0])})
        assert build_Q(A).evaluate(z) == pytest.approx(0.0, abs=1e-14)


if __name__ == '__main__':
    unittest.main()
