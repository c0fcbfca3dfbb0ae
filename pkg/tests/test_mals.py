import unittest

import numpy as np

from ttsolve.config import Config
from ttsolve.core.errors import ContractViolation
from ttsolve.core.models import GmresConfig, MalsInner, MalsOptions
from ttsolve.core.tensor_train import (
    RIGHT,
    TTOperator,
    op_to_full,
    orthogonalize,
    tt_norm,
    tt_random,
    tt_residual_norm,
    tt_to_full,
)
from ttsolve.services.amen import tt_amen_simplified
from ttsolve.services.environment import Environment
from ttsolve.services.gmres import tt_gmres
from ttsolve.services.mals import TTMalsSolver, pair_operator, pair_rhs, tt_mals
from ttsolve.services.problems import conv_diff_operator, rhs_ones


class TestPairSystem(unittest.TestCase):
    def setUp(self):
        self.a = conv_diff_operator([3, 4, 3], c=10.0)
        self.b = tt_random((3, 4, 3), (1, 2, 2, 1), seed=7)
        self.x = orthogonalize(tt_random((3, 4, 3), (1, 2, 3, 1), seed=8), RIGHT)
        self.env = Environment.for_train(self.a, self.x, self.b)

    def test_pair_operator_matches_two_site_projection(self):
        # Act
        op = pair_operator(self.env.left[0], self.a.cores[0], self.a.cores[1], self.env.right[1])

        # Assert
        expected = self.env.local_op(0, sites=2).to_dense()
        self.assertEqual(op.row_dims, (3, 12))
        np.testing.assert_allclose(op_to_full(op), expected, atol=1e-10 * np.max(np.abs(expected)))

    def test_pair_rhs_matches_two_site_projection(self):
        # Act
        rhs = pair_rhs(self.env.rhs_left[0], self.b.cores[0], self.b.cores[1], self.env.rhs_right[1])

        # Assert
        expected = self.env.local_rhs(0, sites=2)
        np.testing.assert_allclose(tt_to_full(rhs).ravel(), expected.ravel(), atol=1e-11)


class TestTTMals(unittest.TestCase):
    def setUp(self):
        self.a = conv_diff_operator([5, 5, 5], c=10.0)
        self.b = rhs_ones(self.a.col_dims)
        self.expected = np.linalg.solve(op_to_full(self.a), tt_to_full(self.b).ravel())

    def assert_solves(self, x, report, epsilon=1e-8):
        self.assertTrue(report.converged)
        self.assertLessEqual(report.final_residual, epsilon)
        self.assertLessEqual(tt_residual_norm(self.a, x, self.b) / tt_norm(self.b), epsilon * (1 + 1e-6))
        error = np.linalg.norm(tt_to_full(x).ravel() - self.expected) / np.linalg.norm(self.expected)
        self.assertLessEqual(error, 1e-6)

    def test_identity(self):
        # Arrange
        a = TTOperator.identity((4, 3, 5))

        # Act
        x, report = tt_mals(a, rhs_ones((4, 3, 5)), epsilon=1e-10)

        # Assert
        self.assertTrue(report.converged)
        np.testing.assert_allclose(tt_to_full(x), np.ones((4, 3, 5)), atol=1e-9)

    def test_conv_diff_with_both_inner_solvers(self):
        for inner in (MalsInner.TT, MalsInner.DENSE):
            with self.subTest(inner=inner.value):
                # Arrange
                solver = TTMalsSolver(epsilon=1e-8, options=MalsOptions(mals_inner=inner))

                # Act
                x, report = solver.solve(self.a, self.b)

                # Assert
                self.assert_solves(x, report)
                self.assertEqual(report.method, "mals")
                self.assertIsNotNone(report.trace[-1].true_residual)

    def test_two_modes(self):
        # Arrange
        a = conv_diff_operator([6, 6], c=10.0)
        b = rhs_ones(a.col_dims)

        # Act
        x, report = tt_mals(a, b, epsilon=1e-10)

        # Assert
        self.assertTrue(report.converged)
        expected = np.linalg.solve(op_to_full(a), np.ones(36))
        np.testing.assert_allclose(tt_to_full(x).ravel(), expected, rtol=1e-7)

    def test_trace_records_each_pair(self):
        _, report = tt_mals(self.a, self.b, epsilon=1e-8)
        self.assertEqual({row.site for row in report.trace}, {0, 1})
        self.assertTrue(all(row.residual_estimate >= 0.0 for row in report.trace))

    def test_sweep_limit_reports_failure(self):
        # Arrange
        options = MalsOptions(inner=GmresConfig(max_iters=2))

        # Act
        _, report = tt_mals(conv_diff_operator([5, 5, 5, 5], c=10.0), rhs_ones((5, 5, 5, 5)),
                            epsilon=1e-12, max_sweeps=1, options=options)

        # Assert
        self.assertFalse(report.converged)
        self.assertLessEqual(report.sweeps, 2)
        self.assertGreater(report.final_residual, 1e-12)

    def test_inner_reduction_is_capped(self):
        solver = TTMalsSolver(epsilon=1e-8)
        self.assertEqual(solver._inner_reduction(1e-9, 1.0), 0.5)
        self.assertAlmostEqual(solver._inner_reduction(1.0, 1.0), 1e-4)

    def test_single_mode_rejected(self):
        with self.assertRaises(ContractViolation):
            tt_mals(conv_diff_operator([5], c=1.0), rhs_ones((5,)))

    def test_invalid_arguments(self):
        with self.assertRaises(ContractViolation):
            TTMalsSolver(epsilon=-1.0)
        with self.assertRaises(ContractViolation):
            tt_mals(self.a, rhs_ones((5, 5)))

    @unittest.skipUnless(Config.SLOW_TESTS, "set TTSOLVE_SLOW_TESTS=true for acceptance-scale runs")
    def test_flop_ordering(self):
        # Arrange
        a = conv_diff_operator([10] * 6, c=10.0)
        b = rhs_ones(a.col_dims)

        # Act
        _, amen = tt_amen_simplified(a, b, epsilon=1e-8)
        _, mals = tt_mals(a, b, epsilon=1e-8)
        _, gmres = tt_gmres(a, b, GmresConfig(epsilon=1e-8, max_iters=200))

        # Assert
        self.assertTrue(amen.converged and mals.converged and gmres.converged)
        self.assertLess(amen.total_flops, mals.total_flops)
        self.assertLess(mals.total_flops, gmres.total_flops)


if __name__ == "__main__":
    unittest.main()
