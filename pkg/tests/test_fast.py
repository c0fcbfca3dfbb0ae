import unittest

import numpy as np

from ttsolve.core.dense import FLOPS
from ttsolve.core.errors import ContractViolation
from ttsolve.core.fast import (
    FALLBACKS,
    LocalOp,
    axpby_trunc_ortho,
    fast_orthogonalize,
    fast_truncate,
    local_apply,
    local_rhs,
    prepare_local_op,
    stable_orthogonal_complement,
)
from ttsolve.core.tensor_train import (
    LEFT,
    RIGHT,
    TensorTrain,
    left_unfold,
    orthogonalize,
    right_unfold,
    tt_axpby_raw,
    tt_norm,
    tt_random,
    tt_rank1,
    tt_to_full,
    tt_truncate,
)


def gram_deviation(x, upto):
    worst = 0.0
    for k in range(upto):
        unf = left_unfold(x.cores[k])
        worst = max(worst, float(np.max(np.abs(unf.T @ unf - np.eye(unf.shape[1])))))
    return worst


def left_orthogonal_random(dims, ranks, seed):
    x = tt_random(dims, ranks, seed=seed)
    return orthogonalize(x, LEFT)


class TestFastOrthogonalize(unittest.TestCase):
    def test_orthonormal_input_is_unchanged(self):
        # Arrange
        x = left_orthogonal_random((4, 4, 4), (1, 3, 3, 1), seed=1)
        reference = [core.copy() for core in x.cores]
        x.mark(0, 0)

        # Act
        fast_orthogonalize(x, LEFT)

        # Assert
        for before, after in zip(reference, x.cores):
            np.testing.assert_allclose(after, before, atol=1e-12)

    def test_random_train_gram_and_value(self):
        x = tt_random((5, 4, 6, 3), (1, 3, 4, 3, 1), seed=2)
        reference = tt_to_full(x)
        fast_orthogonalize(x, LEFT)
        self.assertTrue(x.fast_orthogonalized)
        self.assertEqual(x.left_ortho, 3)
        self.assertLessEqual(gram_deviation(x, 3), 1e-10)
        np.testing.assert_allclose(tt_to_full(x), reference, atol=1e-12 * np.linalg.norm(reference))

    def test_right_direction(self):
        x = tt_random((4, 5, 4), (1, 3, 3, 1), seed=3)
        reference = tt_to_full(x)
        fast_orthogonalize(x, RIGHT)
        self.assertEqual(x.right_ortho, 2)
        for k in (1, 2):
            unf = right_unfold(x.cores[k])
            np.testing.assert_allclose(unf @ unf.T, np.eye(unf.shape[0]), atol=1e-10)
        np.testing.assert_allclose(tt_to_full(x), reference, atol=1e-12 * np.linalg.norm(reference))

    def test_ill_conditioned_step_falls_back(self):
        # Arrange
        rng = np.random.default_rng(4)
        first = rng.standard_normal((1, 6, 2))
        first[0, :, 1] = first[0, :, 0] + 1e-12 * rng.standard_normal(6)
        x = TensorTrain([first, rng.standard_normal((2, 6, 2)), rng.standard_normal((2, 6, 1))])
        reference = tt_to_full(x)
        before = FALLBACKS.snapshot()

        # Act
        fast_orthogonalize(x, LEFT)

        # Assert
        self.assertGreaterEqual(FALLBACKS.since(before)["ortho"], 1)
        self.assertLessEqual(gram_deviation(x, 2), 1e-10)
        np.testing.assert_allclose(tt_to_full(x), reference, atol=1e-11 * np.linalg.norm(reference))


class TestFastTruncate(unittest.TestCase):
    def test_rank_one_in_rank_two_clothes(self):
        x = tt_rank1([np.arange(1.0, 4.0), np.ones(3), np.arange(2.0, 5.0)])
        before = FALLBACKS.snapshot()
        y = fast_truncate(tt_axpby_raw(1.0, x, 1.0, x), 1e-12)
        self.assertEqual(y.ranks, (1, 1, 1, 1))
        self.assertEqual(FALLBACKS.since(before)["truncate"], 0)
        np.testing.assert_allclose(tt_to_full(y), 2 * tt_to_full(x), atol=1e-12)

    def test_error_bound_matches_reference(self):
        x = tt_random((4, 4, 4, 4), (1, 4, 4, 4, 1), seed=9)
        norm = tt_norm(x)
        for fraction in (0.0, 0.01, 0.1, 0.5):
            y = fast_truncate(x, fraction * norm)
            err = np.linalg.norm(tt_to_full(x) - tt_to_full(y))
            self.assertLessEqual(err, fraction * norm + 1e-11 * norm)
            self.assertEqual(y.right_ortho, 3)

    def test_result_is_right_orthogonal(self):
        x = tt_random((4, 5, 4), (1, 4, 4, 1), seed=12)
        y = fast_truncate(x, rel_tol=0.05)
        for k in (1, 2):
            unf = right_unfold(y.cores[k])
            np.testing.assert_allclose(unf @ unf.T, np.eye(unf.shape[0]), atol=1e-10)

    def test_cancellation_triggers_aposteriori_fallback(self):
        # Arrange
        x = tt_random((6, 6, 6), (1, 2, 2, 1), seed=5)
        rng = np.random.default_rng(6)
        y = TensorTrain([core + 1e-8 * rng.standard_normal(core.shape) for core in x.cores])
        z = tt_axpby_raw(1.0, x, -1.0, y)
        scale = np.linalg.norm(tt_to_full(x))
        before = FALLBACKS.snapshot()

        # Act
        result = fast_truncate(z, 0.0)

        # Assert
        self.assertGreaterEqual(FALLBACKS.since(before)["truncate"], 1)
        error = np.linalg.norm(tt_to_full(result) - tt_to_full(z))
        self.assertLessEqual(error, 1e-12 * scale)

    def test_wide_singular_spread_uses_direct_svd(self):
        rng = np.random.default_rng(7)
        first, _ = np.linalg.qr(rng.standard_normal((4, 2)))
        second = np.diag([1.0, 1e-10]) @ rng.standard_normal((2, 5))
        x = TensorTrain([first.reshape(1, 4, 2), second.reshape(2, 5, 1)], left_ortho=1)
        before = FALLBACKS.snapshot()
        y = fast_truncate(x, 0.0)
        self.assertGreaterEqual(FALLBACKS.since(before)["svd"], 1)
        np.testing.assert_allclose(tt_to_full(y), tt_to_full(x), atol=1e-13)

    def test_input_left_untouched(self):
        x = tt_random((3, 3, 3), (1, 2, 2, 1), seed=11)
        before = [c.copy() for c in x.cores]
        fast_truncate(x, 0.1)
        for a, b in zip(before, x.cores):
            np.testing.assert_array_equal(a, b)

    def test_fewer_flops_than_reference(self):
        # Arrange
        x = tt_random((20,) * 5, (1, 20, 20, 20, 20, 1), seed=3)

        # Act
        start = FLOPS.total
        tt_truncate(x, rel_tol=1e-8)
        reference = FLOPS.total - start
        start = FLOPS.total
        fast_truncate(x, rel_tol=1e-8)
        fast = FLOPS.total - start

        # Assert
        self.assertLess(fast, reference)


class TestStableOrthogonalComplement(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(13)

    def test_exact_basis_matches_plain_projection(self):
        q, _ = np.linalg.qr(self.rng.standard_normal((30, 4)))
        v = self.rng.standard_normal((30, 3))
        np.testing.assert_allclose(stable_orthogonal_complement(q, v), v - q @ (q.T @ v), atol=1e-13)

    def test_vectors_in_span_vanish(self):
        q, _ = np.linalg.qr(self.rng.standard_normal((30, 4)))
        v = q @ self.rng.standard_normal((4, 2))
        self.assertLessEqual(np.linalg.norm(stable_orthogonal_complement(q, v)), 1e-10 * np.linalg.norm(v))

    def test_inexact_basis(self):
        # Arrange
        q, _ = np.linalg.qr(self.rng.standard_normal((40, 5)))
        q_noisy = q + 1e-5 * self.rng.standard_normal(q.shape)
        v = self.rng.standard_normal((40, 3))

        # Act
        stable = stable_orthogonal_complement(q_noisy, v)
        plain = v - q_noisy @ (q_noisy.T @ v)

        # Assert
        self.assertLessEqual(np.max(np.abs(q_noisy.T @ stable)), 1e-10 * np.linalg.norm(v))
        self.assertGreater(np.max(np.abs(q_noisy.T @ plain)), 1e-8 * np.linalg.norm(v))

    def test_coefficients_reconstruct(self):
        q, _ = np.linalg.qr(self.rng.standard_normal((20, 3)))
        v = self.rng.standard_normal((20, 2))
        projected, coeffs = stable_orthogonal_complement(q, v, return_coeffs=True)
        np.testing.assert_allclose(q @ coeffs + projected, v, atol=1e-13)


class TestAxpbyTruncOrtho(unittest.TestCase):
    def test_beta_zero_keeps_ranks(self):
        x = left_orthogonal_random((4, 4, 4), (1, 3, 3, 1), seed=1)
        y = left_orthogonal_random((4, 4, 4), (1, 2, 2, 1), seed=2)
        z = axpby_trunc_ortho(2.0, x, 0.0, y, abs_tol=1e-10 * tt_norm(x))
        self.assertEqual(z.ranks, x.ranks)
        np.testing.assert_allclose(tt_to_full(z), 2 * tt_to_full(x), atol=1e-9 * tt_norm(x))

    def test_cancellation(self):
        x = left_orthogonal_random((4, 4, 4), (1, 3, 3, 1), seed=3)
        z = axpby_trunc_ortho(1.0, x, -1.0, x, abs_tol=1e-10)
        self.assertEqual(z.ranks, (1, 1, 1, 1))
        self.assertLessEqual(tt_norm(z), 1e-10)

    def test_matches_reference_path(self):
        # Arrange
        x = left_orthogonal_random((3, 4, 5, 3), (1, 3, 4, 3, 1), seed=4)
        y = left_orthogonal_random((3, 4, 5, 3), (1, 2, 2, 2, 1), seed=5)
        expected = 0.7 * tt_to_full(x) - 1.3 * tt_to_full(y)

        # Act
        fast = axpby_trunc_ortho(0.7, x, -1.3, y)
        reference = tt_truncate(tt_axpby_raw(0.7, x, -1.3, y))

        # Assert
        scale = np.linalg.norm(expected)
        np.testing.assert_allclose(tt_to_full(fast), expected, atol=1e-11 * scale)
        np.testing.assert_allclose(tt_to_full(fast), tt_to_full(reference), atol=1e-11 * scale)
        self.assertEqual(fast.right_ortho, 3)

    def test_swaps_when_second_is_larger(self):
        x = left_orthogonal_random((4, 4, 4), (1, 2, 2, 1), seed=6)
        y = left_orthogonal_random((4, 4, 4), (1, 4, 4, 1), seed=7)
        z = axpby_trunc_ortho(1.0, x, 2.0, y)
        expected = tt_to_full(x) + 2 * tt_to_full(y)
        np.testing.assert_allclose(tt_to_full(z), expected, atol=1e-11 * np.linalg.norm(expected))

    def test_right_orthogonal_inputs(self):
        x = orthogonalize(tt_random((4, 4, 4), (1, 3, 3, 1), seed=8), RIGHT)
        y = orthogonalize(tt_random((4, 4, 4), (1, 2, 2, 1), seed=9), RIGHT)
        z = axpby_trunc_ortho(1.0, x, 1.0, y)
        self.assertEqual(z.left_ortho, 2)
        expected = tt_to_full(x) + tt_to_full(y)
        np.testing.assert_allclose(tt_to_full(z), expected, atol=1e-11 * np.linalg.norm(expected))

    def test_fast_orthogonalized_input(self):
        x = fast_orthogonalize(tt_random((4, 5, 4), (1, 4, 4, 1), seed=10), LEFT)
        y = left_orthogonal_random((4, 5, 4), (1, 2, 2, 1), seed=11)
        z = axpby_trunc_ortho(1.0, x, -0.5, y)
        expected = tt_to_full(x) - 0.5 * tt_to_full(y)
        np.testing.assert_allclose(tt_to_full(z), expected, atol=1e-10 * np.linalg.norm(expected))

    def test_requires_orthogonal_inputs(self):
        x = tt_random((3, 3, 3), (1, 2, 2, 1), seed=1)
        y = left_orthogonal_random((3, 3, 3), (1, 2, 2, 1), seed=2)
        with self.assertRaises(ContractViolation):
            axpby_trunc_ortho(1.0, x, 1.0, y)

    def test_fewer_flops_when_second_rank_is_half(self):
        # Arrange
        x = left_orthogonal_random((10, 10, 10, 10), (1, 8, 8, 8, 1), seed=12)
        y = left_orthogonal_random((10, 10, 10, 10), (1, 4, 4, 4, 1), seed=13)

        # Act
        start = FLOPS.total
        tt_truncate(tt_axpby_raw(1.0, x, 1.0, y))
        reference = FLOPS.total - start
        start = FLOPS.total
        axpby_trunc_ortho(1.0, x, 1.0, y)
        fast = FLOPS.total - start

        # Assert
        self.assertLess(fast, reference)

    def test_randomized_dual_path(self):
        for seed in range(100):
            rng = np.random.default_rng(2000 + seed)
            d = int(rng.integers(2, 5))
            dims = tuple(int(n) for n in rng.integers(2, 6, size=d))
            rx = (1,) + tuple(int(r) for r in rng.integers(1, 5, size=d - 1)) + (1,)
            ry = (1,) + tuple(int(r) for r in rng.integers(1, 4, size=d - 1)) + (1,)
            x = left_orthogonal_random(dims, rx, seed)
            y = left_orthogonal_random(dims, ry, seed + 700)
            expected = tt_to_full(x) - 0.5 * tt_to_full(y)
            scale = max(np.linalg.norm(expected), 1e-300)
            tol = 0.01 * scale

            z = axpby_trunc_ortho(1.0, x, -0.5, y, abs_tol=tol)
            self.assertLessEqual(np.linalg.norm(tt_to_full(z) - expected), 10 * tol)

            t = fast_truncate(x, abs_tol=0.05 * tt_norm(x))
            self.assertLessEqual(np.linalg.norm(tt_to_full(t) - tt_to_full(x)), 10 * 0.05 * tt_norm(x))


def loop_apply(wl, a, y, wr):
    r0, a0, _ = wl.shape
    _, n, _, a1 = a.shape
    r1 = wr.shape[0]
    z = np.zeros((r0, n, r1))
    for p in range(r0):
        for i in range(n):
            for s in range(r1):
                total = 0.0
                for al in range(a0):
                    for q in range(r0):
                        for j in range(n):
                            for be in range(a1):
                                for t in range(r1):
                                    total += wl[p, al, q] * a[al, i, j, be] * y[q, j, t] * wr[s, be, t]
                z[p, i, s] = total
    return z


class TestLocalOp(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(21)

    def test_identity(self):
        r0, n, r1 = 2, 3, 2
        wl = np.eye(r0).reshape(r0, 1, r0)
        wr = np.eye(r1).reshape(r1, 1, r1)
        op = prepare_local_op(wl, np.eye(n).reshape(1, n, n, 1), wr)
        y = self.rng.standard_normal((r0, n, r1))
        np.testing.assert_allclose(local_apply(op, y), y, atol=1e-14)
        np.testing.assert_array_equal(local_apply(op, np.zeros((r0, n, r1))), np.zeros((r0, n, r1)))

    def test_rank_one_environments_give_bare_core(self):
        a = self.rng.standard_normal((1, 4, 4, 1))
        op = prepare_local_op(np.ones((1, 1, 1)), a, np.ones((1, 1, 1)))
        y = self.rng.standard_normal((1, 4, 1))
        np.testing.assert_allclose(local_apply(op, y).ravel(), a[0, :, :, 0] @ y.ravel(), atol=1e-13)

    def test_matches_index_loops_and_flop_formula(self):
        # Arrange
        wl = self.rng.standard_normal((2, 2, 2))
        a = self.rng.standard_normal((2, 3, 3, 2))
        wr = self.rng.standard_normal((2, 2, 2))
        y = self.rng.standard_normal((2, 3, 2))
        op = prepare_local_op(wl, a, wr)

        # Act
        before = FLOPS.snapshot()
        z = local_apply(op, y)
        spent = FLOPS.since(before)["contract"]

        # Assert
        np.testing.assert_allclose(z, loop_apply(wl, a, y, wr), atol=1e-12)
        self.assertEqual(spent, op.flops())
        np.testing.assert_allclose(op.to_dense() @ y.ravel(), z.ravel(), atol=1e-12)

    def test_padded_layout_gives_same_result(self):
        r0, n, r1 = 70, 2, 1
        wl = self.rng.standard_normal((r0, 1, r0))
        a = self.rng.standard_normal((1, n, n, 1))
        wr = np.ones((r1, 1, r1))
        op = prepare_local_op(wl, a, wr)
        self.assertGreater(op.a1.stride, op.a1.rows)
        y = self.rng.standard_normal((r0, n, r1))
        np.testing.assert_allclose(local_apply(op, y).ravel(), op.to_dense() @ y.ravel(), atol=1e-10)

    def test_two_site_merge(self):
        wl = self.rng.standard_normal((2, 1, 2))
        first = self.rng.standard_normal((1, 2, 2, 2))
        second = self.rng.standard_normal((2, 3, 3, 1))
        wr = self.rng.standard_normal((2, 1, 2))
        op = prepare_local_op(wl, [first, second], wr)
        self.assertEqual(op.shape, (2, 6, 2))
        merged = np.einsum("aijb,bklc->aikjlc", first, second).reshape(1, 6, 6, 1)
        y = self.rng.standard_normal((2, 6, 2))
        np.testing.assert_allclose(local_apply(op, y), loop_apply(wl, merged, y, wr), atol=1e-12)

    def test_shape_mismatch(self):
        op = prepare_local_op(np.ones((1, 1, 1)), np.ones((1, 2, 2, 1)), np.ones((1, 1, 1)))
        with self.assertRaises(ContractViolation):
            local_apply(op, np.ones((1, 3, 1)))
        with self.assertRaises(ContractViolation):
            LocalOp(np.ones((1, 2, 1)), np.ones((1, 2, 2, 1)), np.ones((1, 1, 1)))

    def test_local_rhs(self):
        wl = self.rng.standard_normal((2, 3))
        core = self.rng.standard_normal((3, 4, 2))
        wr = self.rng.standard_normal((5, 2))
        expected = np.einsum("pg,gih,sh->pis", wl, core, wr)
        np.testing.assert_allclose(local_rhs(wl, core, wr), expected, atol=1e-13)


if __name__ == "__main__":
    unittest.main()
