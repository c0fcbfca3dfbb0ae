import unittest

import numpy as np

from ttsolve.core.errors import ContractViolation, OracleTooLargeError
from ttsolve.core.tensor_train import (
    LEFT,
    RIGHT,
    TensorTrain,
    TTOperator,
    feasible_ranks,
    fold,
    left_unfold,
    op_to_full,
    orthogonalize,
    right_unfold,
    tt_apply_op,
    tt_axpby_raw,
    tt_dot,
    tt_norm,
    tt_random,
    tt_rank1,
    tt_residual_norm,
    tt_reverse,
    tt_scale,
    tt_to_full,
    tt_truncate,
    unfold,
)


def random_operator(dims, ranks, seed):
    rng = np.random.default_rng(seed)
    cores = [rng.standard_normal((ranks[k], n, n, ranks[k + 1])) for k, n in enumerate(dims)]
    return TTOperator(cores)


def assert_left_orthogonal(test, x, upto):
    for k in range(upto):
        unf = left_unfold(x.cores[k])
        test.assertLessEqual(np.max(np.abs(unf.T @ unf - np.eye(unf.shape[1]))), 1e-12)


def assert_right_orthogonal(test, x, start):
    for k in range(start, x.d):
        unf = right_unfold(x.cores[k])
        test.assertLessEqual(np.max(np.abs(unf @ unf.T - np.eye(unf.shape[0]))), 1e-12)


class TestConstruction(unittest.TestCase):
    def test_rank1_ones(self):
        x = tt_rank1([np.ones(2), np.ones(3), np.ones(4)])
        np.testing.assert_array_equal(tt_to_full(x), np.ones((2, 3, 4)))

    def test_rank1_single_mode(self):
        np.testing.assert_array_equal(tt_to_full(tt_rank1([[1.0, 2.0]])), [1.0, 2.0])

    def test_rank1_outer_product(self):
        full = tt_to_full(tt_rank1([[1.0, 2.0], [3.0, 4.0]]))
        np.testing.assert_array_equal(full, [[3.0, 4.0], [6.0, 8.0]])

    def test_rank1_empty_list(self):
        with self.assertRaises(ContractViolation):
            tt_rank1([])

    def test_random_is_deterministic(self):
        a = tt_random((3, 4, 5), (1, 2, 3, 1), seed=7)
        b = tt_random((3, 4, 5), (1, 2, 3, 1), seed=7)
        for ca, cb in zip(a.cores, b.cores):
            np.testing.assert_array_equal(ca, cb)

    def test_random_core_shapes(self):
        x = tt_random((3, 3, 3), (1, 2, 2, 1), seed=0)
        self.assertEqual([c.shape for c in x.cores], [(1, 3, 2), (2, 3, 2), (2, 3, 1)])

    def test_random_rank_clamped(self):
        # Arrange
        notices = []

        # Act
        x = tt_random((2, 5, 5), (1, 4, 3, 1), seed=1, notices=notices)

        # Assert
        self.assertEqual(x.ranks, (1, 2, 3, 1))
        self.assertEqual(len(notices), 1)

    def test_invalid_chain(self):
        with self.assertRaises(ContractViolation):
            feasible_ranks((2, 2), (2, 1, 1))
        with self.assertRaises(ContractViolation):
            tt_random((2, 2), (1, 1), seed=0)

    def test_rank_mismatch_rejected(self):
        with self.assertRaises(ContractViolation):
            TensorTrain([np.ones((1, 2, 2)), np.ones((3, 2, 1))])


class TestUnfoldings(unittest.TestCase):
    def test_round_trip_both_sides(self):
        core = np.random.default_rng(0).standard_normal((3, 4, 5))
        for side in (LEFT, RIGHT):
            for pad in (False, True):
                np.testing.assert_array_equal(fold(unfold(core, side, pad), core.shape), core)

    def test_left_unfolding_element_mapping(self):
        core = np.arange(24.0).reshape(2, 3, 4)
        matrix = unfold(core, LEFT).view()
        self.assertEqual(matrix.shape, (6, 4))
        self.assertEqual(matrix[1 * 3 + 2, 3], core[1, 2, 3])


class TestOracles(unittest.TestCase):
    def test_oracle_guard(self):
        x = tt_rank1([np.ones(101)] * 3)
        with self.assertRaises(OracleTooLargeError):
            tt_to_full(x)

    def test_axpby_linearity(self):
        x = tt_random((2, 3, 2), (1, 2, 2, 1), seed=3)
        np.testing.assert_allclose(tt_to_full(tt_axpby_raw(1.0, x, 1.0, x)), 2 * tt_to_full(x), atol=1e-13)

    def test_full_matches_index_loops(self):
        x = tt_random((2, 3, 4), (1, 2, 3, 1), seed=9)
        full = tt_to_full(x)
        a, b, c = x.cores
        for i in range(2):
            for j in range(3):
                for k in range(4):
                    value = 0.0
                    for p in range(2):
                        for q in range(3):
                            value += a[0, i, p] * b[p, j, q] * c[q, k, 0]
                    self.assertAlmostEqual(full[i, j, k], value, places=12)

    def test_identity_operator(self):
        np.testing.assert_array_equal(op_to_full(TTOperator.identity((2, 3))), np.eye(6))

    def test_operator_matches_index_loops(self):
        a = random_operator((2, 3), (1, 2, 1), seed=4)
        full = op_to_full(a)
        c0, c1 = a.cores
        for i0 in range(2):
            for i1 in range(3):
                for j0 in range(2):
                    for j1 in range(3):
                        value = sum(c0[0, i0, j0, s] * c1[s, i1, j1, 0] for s in range(2))
                        self.assertAlmostEqual(full[i0 * 3 + i1, j0 * 3 + j1], value, places=12)


class TestArithmetic(unittest.TestCase):
    def test_dot_of_ones(self):
        x = tt_rank1([np.ones(2), np.ones(3), np.ones(4)])
        self.assertEqual(tt_dot(x, x), 24.0)

    def test_dot_matches_oracle(self):
        x = tt_random((3, 2, 4, 2), (1, 2, 3, 2, 1), seed=1)
        y = tt_random((3, 2, 4, 2), (1, 3, 2, 2, 1), seed=2)
        expected = float(np.sum(tt_to_full(x) * tt_to_full(y)))
        self.assertAlmostEqual(tt_dot(x, y) / expected, 1.0, places=12)

    def test_dot_dim_mismatch(self):
        with self.assertRaises(ContractViolation):
            tt_dot(tt_rank1([np.ones(2)]), tt_rank1([np.ones(3)]))

    def test_norm_of_ones(self):
        self.assertAlmostEqual(tt_norm(tt_rank1([np.ones(2)] * 3)), np.sqrt(8.0), places=13)

    def test_norm_after_scaling(self):
        x = tt_random((3, 3, 3), (1, 2, 2, 1), seed=5)
        self.assertAlmostEqual(tt_norm(tt_scale(x, 1.0 / tt_norm(x))), 1.0, places=13)

    def test_axpby_cancellation_keeps_summed_ranks(self):
        x = tt_random((3, 3, 3), (1, 2, 2, 1), seed=6)
        z = tt_axpby_raw(1.0, x, -1.0, x)
        self.assertEqual(z.ranks, (1, 4, 4, 1))
        self.assertLessEqual(tt_norm(z), 1e-12 * tt_norm(x))

    def test_axpby_block_ranks(self):
        x = tt_random((3, 3), (1, 2, 1), seed=0)
        y = tt_random((3, 3), (1, 3, 1), seed=1)
        self.assertEqual(tt_axpby_raw(1.0, x, 1.0, y).ranks, (1, 5, 1))

    def test_axpby_oracle(self):
        x = tt_random((2, 3, 4), (1, 2, 2, 1), seed=7)
        y = tt_random((2, 3, 4), (1, 2, 3, 1), seed=8)
        z = tt_axpby_raw(0.5, x, -2.0, y)
        np.testing.assert_allclose(tt_to_full(z), 0.5 * tt_to_full(x) - 2.0 * tt_to_full(y), atol=1e-13)

    def test_apply_identity(self):
        x = tt_random((2, 3, 4), (1, 2, 2, 1), seed=2)
        y = tt_apply_op(TTOperator.identity(x.dims), x)
        np.testing.assert_allclose(tt_to_full(y), tt_to_full(x), atol=1e-14)

    def test_apply_rank_products(self):
        a = random_operator((3, 3, 3), (1, 2, 2, 1), seed=3)
        x = tt_random((3, 3, 3), (1, 3, 3, 1), seed=3)
        self.assertEqual(tt_apply_op(a, x).ranks, (1, 6, 6, 1))

    def test_apply_matches_dense_matvec(self):
        a = random_operator((3, 2, 3), (1, 2, 3, 1), seed=10)
        x = tt_random((3, 2, 3), (1, 2, 2, 1), seed=11)
        expected = op_to_full(a) @ tt_to_full(x).ravel()
        np.testing.assert_allclose(tt_to_full(tt_apply_op(a, x)).ravel(), expected, atol=1e-12)

    def test_residual_norm(self):
        a = random_operator((2, 3), (1, 2, 1), seed=12)
        x = tt_random((2, 3), (1, 2, 1), seed=13)
        b = tt_random((2, 3), (1, 2, 1), seed=14)
        expected = np.linalg.norm(op_to_full(a) @ tt_to_full(x).ravel() - tt_to_full(b).ravel())
        self.assertAlmostEqual(tt_residual_norm(a, x, b) / expected, 1.0, places=11)

    def test_reverse(self):
        x = tt_random((2, 3, 4), (1, 2, 3, 1), seed=15)
        np.testing.assert_allclose(tt_to_full(tt_reverse(x)), tt_to_full(x).transpose(2, 1, 0), atol=1e-14)


class TestOrthogonalize(unittest.TestCase):
    def test_left_sweep(self):
        # Arrange
        x = tt_random((3, 4, 3), (1, 3, 3, 1), seed=2)
        reference = tt_to_full(x)

        # Act
        orthogonalize(x, LEFT, 2)

        # Assert
        self.assertEqual(x.left_ortho, 2)
        assert_left_orthogonal(self, x, 2)
        np.testing.assert_allclose(tt_to_full(x), reference, atol=1e-13 * np.linalg.norm(reference))

    def test_right_sweep(self):
        x = tt_random((3, 4, 3, 2), (1, 3, 3, 2, 1), seed=3)
        reference = tt_to_full(x)
        orthogonalize(x, RIGHT)
        self.assertEqual(x.right_ortho, 3)
        assert_right_orthogonal(self, x, 1)
        np.testing.assert_allclose(tt_to_full(x), reference, atol=1e-13 * np.linalg.norm(reference))

    def test_norm_preserved_and_idempotent(self):
        x = tt_random((3, 3, 3), (1, 2, 2, 1), seed=4)
        before = tt_norm(x)
        orthogonalize(x, LEFT)
        first = [c.copy() for c in x.cores]
        orthogonalize(x, LEFT)
        for a, b in zip(first, x.cores):
            np.testing.assert_array_equal(a, b)
        self.assertAlmostEqual(tt_norm(x) / before, 1.0, places=13)

    def test_wide_unfolding_shrinks_rank(self):
        x = tt_random((2, 2, 2), (1, 2, 2, 1), seed=0)
        x.cores[0] = np.random.default_rng(1).standard_normal((1, 2, 5))
        x.cores[1] = np.random.default_rng(2).standard_normal((5, 2, 2))
        reference = tt_to_full(x)
        orthogonalize(x, LEFT)
        self.assertEqual(x.ranks[1], 2)
        np.testing.assert_allclose(tt_to_full(x), reference, atol=1e-12)

    def test_markers_are_truthful_after_mixed_sweeps(self):
        x = tt_random((3, 3, 3, 3), (1, 3, 3, 3, 1), seed=6)
        orthogonalize(x, RIGHT, 2)
        orthogonalize(x, LEFT, 1)
        self.assertEqual((x.left_ortho, x.right_ortho), (1, 2))
        assert_left_orthogonal(self, x, x.left_ortho)
        assert_right_orthogonal(self, x, x.d - x.right_ortho)


class TestTruncate(unittest.TestCase):
    def test_rank_two_clothes(self):
        x = tt_rank1([np.arange(1.0, 4.0), np.ones(3), np.arange(2.0, 5.0)])
        y = tt_truncate(tt_axpby_raw(1.0, x, 1.0, x), 1e-12)
        self.assertEqual(y.ranks, (1, 1, 1, 1))
        np.testing.assert_allclose(tt_to_full(y), 2 * tt_to_full(x), atol=1e-12)

    def test_zero_tolerance(self):
        x = tt_random((3, 4, 3), (1, 3, 3, 1), seed=8)
        y = tt_truncate(x, 0.0)
        np.testing.assert_allclose(tt_to_full(y), tt_to_full(x), atol=1e-12 * tt_norm(x))
        self.assertEqual(y.right_ortho, 2)
        assert_right_orthogonal(self, y, 1)

    def test_error_bound(self):
        x = tt_random((4, 4, 4, 4), (1, 4, 4, 4, 1), seed=9)
        norm = tt_norm(x)
        for fraction in (0.01, 0.1, 0.5):
            y = tt_truncate(x, fraction * norm)
            err = np.linalg.norm(tt_to_full(x) - tt_to_full(y))
            self.assertLessEqual(err, fraction * norm + 1e-12 * norm)

    def test_relative_tolerance_and_rank_cap(self):
        x = tt_random((4, 4, 4), (1, 4, 4, 1), seed=10)
        y = tt_truncate(x, rel_tol=0.2)
        self.assertLessEqual(np.linalg.norm(tt_to_full(x) - tt_to_full(y)), 0.2 * tt_norm(x) * (1 + 1e-12))
        self.assertLessEqual(tt_truncate(x, max_rank=2).max_rank, 2)

    def test_input_left_untouched(self):
        x = tt_random((3, 3, 3), (1, 2, 2, 1), seed=11)
        before = [c.copy() for c in x.cores]
        tt_truncate(x, 0.1)
        for a, b in zip(before, x.cores):
            np.testing.assert_array_equal(a, b)


class TestRandomizedOracleSuite(unittest.TestCase):
    """Seeded sweep over small shapes: every reference op against the dense oracle."""

    def test_reference_ops_against_dense(self):
        for seed in range(100):
            rng = np.random.default_rng(1000 + seed)
            d = int(rng.integers(1, 5))
            dims = tuple(int(n) for n in rng.integers(2, 6, size=d))
            ranks = (1,) + tuple(int(r) for r in rng.integers(1, 4, size=d - 1)) + (1,)
            x = tt_random(dims, ranks, seed=seed)
            y = tt_random(dims, ranks, seed=seed + 500)
            a = random_operator(dims, (1,) + tuple(int(r) for r in rng.integers(1, 3, size=d - 1)) + (1,), seed)
            fx, fy = tt_to_full(x), tt_to_full(y)
            scale = np.linalg.norm(fx) * np.linalg.norm(fy)

            self.assertLessEqual(abs(tt_dot(x, y) - np.sum(fx * fy)), 1e-11 * scale)
            self.assertLessEqual(abs(tt_norm(x) - np.linalg.norm(fx)), 1e-11 * np.linalg.norm(fx))
            np.testing.assert_allclose(tt_to_full(tt_axpby_raw(2.0, x, -1.0, y)), 2 * fx - fy,
                                       atol=1e-11 * (np.linalg.norm(fx) + np.linalg.norm(fy)))
            ax = op_to_full(a) @ fx.ravel()
            np.testing.assert_allclose(tt_to_full(tt_apply_op(a, x)).ravel(), ax, atol=1e-11 * max(np.linalg.norm(ax), 1.0))

            z = x.copy()
            orthogonalize(z, LEFT)
            np.testing.assert_allclose(tt_to_full(z), fx, atol=1e-11 * np.linalg.norm(fx))
            tol = 0.05 * np.linalg.norm(fx)
            t = tt_truncate(x, tol)
            self.assertLessEqual(np.linalg.norm(tt_to_full(t) - fx), tol + 1e-12 * np.linalg.norm(fx))

    def test_gauge_invariance(self):
        x = tt_random((3, 4, 3), (1, 3, 3, 1), seed=21)
        reference = tt_to_full(x)
        rng = np.random.default_rng(22)
        m = np.eye(3) + 0.3 * rng.standard_normal((3, 3))
        y = x.copy()
        y.cores[0] = np.einsum("anr,rs->ans", y.cores[0], m)
        y.cores[1] = np.einsum("rs,snt->rnt", np.linalg.inv(m), y.cores[1])
        np.testing.assert_allclose(tt_to_full(y), reference, atol=1e-11 * np.linalg.norm(reference))


class TestOperatorHelpers(unittest.TestCase):
    def test_transpose_and_symmetry(self):
        a = random_operator((2, 3), (1, 2, 1), seed=1)
        np.testing.assert_allclose(op_to_full(a.transpose()), op_to_full(a).T, atol=1e-14)
        self.assertFalse(a.is_symmetric())
        self.assertTrue(TTOperator.identity((2, 3)).is_symmetric())

    def test_train_view_round_trip(self):
        a = random_operator((2, 3), (1, 2, 1), seed=2)
        b = TTOperator.from_train(a.as_train(), a.row_dims, a.col_dims)
        np.testing.assert_array_equal(op_to_full(a), op_to_full(b))


if __name__ == "__main__":
    unittest.main()
