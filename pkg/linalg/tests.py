import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose

from MSAccel.exceptions import InvalidInputError, IterationBudgetError
from linalg.solvers import conj_res, reg_newton_step


def random_psd(rng, d, rank=None):
    B = rng.normal(size=(d, rank or d))
    return B @ B.T


class RegNewtonStepTests(SimpleTestCase):

    def test_identity(self):
        y = np.array([2.0, -4.0, 1.0])
        assert_allclose(reg_newton_step(np.eye(3), y, 1.0), -y / 2)

    def test_zero_hessian(self):
        assert_allclose(reg_newton_step(np.zeros((1, 1)), np.array([2.0]), 4.0), [-0.5])

    def test_step_norm_monotone_in_lambda(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            d = int(rng.integers(1, 31))
            H = random_psd(rng, d, rank=int(rng.integers(1, d + 1)))
            g = rng.normal(size=d)
            lam1, lam2 = sorted(rng.uniform(0.01, 10.0, size=2))
            w1 = np.linalg.norm(reg_newton_step(H, g, lam1))
            w2 = np.linalg.norm(reg_newton_step(H, g, lam2))
            self.assertLessEqual(w2, w1 * (1 + 1e-9))
            self.assertGreaterEqual(w2, (lam1 / lam2) * w1 * (1 - 1e-9))

    def test_non_positive_lambda_rejected(self):
        with self.assertRaises(InvalidInputError):
            reg_newton_step(np.eye(2), np.ones(2), 0.0)


class ConjResTests(SimpleTestCase):

    def test_identity_terminates_in_one_iteration(self):
        b = np.array([1.0, -2.0, 3.0])
        w, iters, hvps = conj_res(lambda v: v, b, threshold=1e-3)
        assert_allclose(w, b)
        self.assertEqual(iters, 1)
        self.assertEqual(hvps, 2)

    def test_zero_rhs_returns_immediately(self):
        calls = []

        def apply_A(v):
            calls.append(v)
            return v

        w, iters, hvps = conj_res(apply_A, np.zeros(4), threshold=1.0)
        assert_allclose(w, np.zeros(4))
        self.assertEqual((iters, hvps), (0, 0))
        self.assertEqual(calls, [])

    def test_exact_solve_on_diagonal(self):
        A = np.diag([1.0, 10.0])
        w, iters, _ = conj_res(lambda v: A @ v, np.array([1.0, 1.0]), threshold=1e-14)
        assert_allclose(w, [1.0, 0.1], atol=1e-10)
        self.assertLessEqual(iters, 3)

    def test_full_rank_finite_termination(self):
        rng = np.random.default_rng(11)
        d = 6
        A = random_psd(rng, d) + 0.5 * np.eye(d)
        b = rng.normal(size=d)
        w, iters, _ = conj_res(lambda v: A @ v, b, threshold=1e-10)
        self.assertLessEqual(iters, d + 1)
        assert_allclose(A @ w, b, atol=1e-8)

    def test_residual_optimal_over_krylov_subspace(self):
        rng = np.random.default_rng(5)
        d = 5
        A = random_psd(rng, d) + 0.1 * np.eye(d)
        b = rng.normal(size=d)
        states = []
        conj_res(
            lambda v: A @ v, b, threshold=1e-12,
            callback=lambda s: states.append((s.iter, s.residual_norm, s.iterate_norm)),
        )
        self.assertTrue(states)
        for i, residual, _ in states:
            if i > d:
                break
            K = np.column_stack([np.linalg.matrix_power(A, j) @ b for j in range(i)])
            coef, *_ = np.linalg.lstsq(A @ K, b, rcond=None)
            best = np.linalg.norm(A @ K @ coef - b)
            self.assertAlmostEqual(residual, best, delta=1e-8 * max(1.0, np.linalg.norm(b)))

        residuals = [r for _, r, _ in states]
        norms = [n for _, _, n in states]
        for a, b_ in zip(residuals, residuals[1:]):
            self.assertLessEqual(b_, a * (1 + 1e-10))
        for a, b_ in zip(norms, norms[1:]):
            self.assertGreaterEqual(b_, a * (1 - 1e-10))

    def test_monotone_on_random_regularized_systems(self):
        rng = np.random.default_rng(13)
        for _ in range(200):
            d = int(rng.integers(2, 31))
            lam = float(rng.uniform(0.05, 1.0))
            A = random_psd(rng, d, rank=int(rng.integers(1, d + 1))) + lam * np.eye(d)
            b = rng.normal(size=d)
            states = []
            conj_res(
                lambda v: A @ v, b, threshold=0.5 * lam,
                callback=lambda s: states.append((s.residual_norm, s.iterate_norm)),
            )
            residuals = [np.linalg.norm(b)] + [r for r, _ in states]
            norms = [0.0] + [n for _, n in states]
            for before, after in zip(residuals, residuals[1:]):
                self.assertLessEqual(after, before * (1 + 1e-10))
            for before, after in zip(norms, norms[1:]):
                self.assertGreaterEqual(after, before * (1 - 1e-10))

    def test_stopping_rule_holds_on_return(self):
        rng = np.random.default_rng(2)
        A = random_psd(rng, 30, rank=10) + 0.01 * np.eye(30)
        b = rng.normal(size=30)
        threshold = 0.05
        w, _, _ = conj_res(lambda v: A @ v, b, threshold)
        self.assertLessEqual(np.linalg.norm(A @ w - b), 0.5 * threshold * np.linalg.norm(w) + 1e-12)

    def test_cap_raises_with_last_residual(self):
        A = np.diag(np.linspace(1.0, 100.0, 40))
        b = np.ones(40)
        with self.assertRaises(IterationBudgetError) as ctx:
            conj_res(lambda v: A @ v, b, threshold=1e-14, cap=2)
        self.assertIsNotNone(ctx.exception.last_residual)
        self.assertGreater(ctx.exception.last_residual, 0.0)
