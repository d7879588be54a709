import math

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose

from MSAccel.exceptions import InvalidInputError
from objectives.functions import Dataset, Objective, make_logistic, make_quadratic, make_worst_case
from oracles.ms_oracles import (
    AdaptiveNewtonOracle,
    amsn,
    amsn_fo,
    check_ms,
    cr_oracle,
    gd_oracle,
    movement_bound,
)


class CubeOverSix(Objective):
    """f(x) = |x|^3 / 6 in one dimension"""

    name = 'cube'

    def __init__(self):
        super().__init__(1)

    def value(self, x):
        return float(abs(self._check(x)[0]) ** 3 / 6)

    def gradient(self, x):
        x = self._check(x)
        return 0.5 * x * np.abs(x)

    def hessian(self, x):
        return np.abs(self._check(x)).reshape(1, 1)

    def hvp(self, x, v):
        return np.abs(self._check(x)) * v


def solve_count_limit(lam, lam_prime):
    return math.ceil(2 + 2 * math.log2(1 + abs(math.log2(lam / lam_prime))) - 1e-9)


class CheckMSTests(SimpleTestCase):

    def test_quadratic_always_passes(self):
        obj = make_quadratic(np.diag([1.0, 3.0]), np.array([1.0, -1.0]))
        for lam in (1e-3, 1.0, 50.0):
            outcome = check_ms(obj, np.array([2.0, 5.0]), lam, sigma=0.01)
            self.assertTrue(outcome.passed)
            self.assertAlmostEqual(outcome.residual, 0.0, places=10)

    def test_scalar_cube(self):
        obj = CubeOverSix()
        outcome = check_ms(obj, np.array([1.0]), 0.5, sigma=0.5)
        assert_allclose(outcome.x, [2 / 3])
        self.assertAlmostEqual(outcome.residual, 1 / 9, places=12)
        self.assertAlmostEqual(outcome.step_norm, 1 / 3, places=12)
        self.assertTrue(outcome.passed)
        self.assertFalse(check_ms(obj, np.array([1.0]), 0.5, sigma=0.3).passed)

    def test_stationary_point_passes(self):
        obj = make_worst_case(4)
        outcome = check_ms(obj, np.ones(4), 1.0, sigma=0.5)
        self.assertTrue(outcome.passed)
        assert_allclose(outcome.x, np.ones(4))
        self.assertEqual(outcome.residual, 0.0)

    def test_non_finite_gradient_rejected(self):
        obj = make_quadratic(np.eye(1), np.array([np.inf]))
        with self.assertRaises(InvalidInputError):
            check_ms(obj, np.zeros(1), 1.0, sigma=0.5)


class GradientOracleTests(SimpleTestCase):

    def test_identity_quadratic(self):
        obj = make_quadratic(np.eye(2), np.zeros(2))
        result = gd_oracle(obj, np.array([3.0, -1.0]), 1.0)
        assert_allclose(result.x, [0.0, 0.0])
        self.assertEqual(result.lam, 1.0)
        self.assertEqual(result.counters.gradient_evals, 1)

    def test_logistic_at_origin(self):
        features = np.array([[1.0, 0.0], [0.6, 0.8], [0.0, 1.0]])
        labels = np.array([1.0, -1.0, 1.0])
        obj = make_logistic(Dataset(features, labels))
        result = gd_oracle(obj, np.zeros(2), 2.0)
        assert_allclose(result.x, (labels[:, None] * features).mean(axis=0), atol=1e-15)
        self.assertEqual(result.lam, 0.5)

    def test_stationary_query(self):
        obj = make_quadratic(np.eye(2), np.zeros(2))
        result = gd_oracle(obj, np.zeros(2), 0.3)
        assert_allclose(result.x, np.zeros(2))
        self.assertTrue(result.stationary)


class CubicNewtonOracleTests(SimpleTestCase):

    def test_identity_quadratic_fixpoint(self):
        obj = make_quadratic(np.eye(3), np.zeros(3))
        y = np.array([0.6, 0.0, 0.8])
        result = cr_oracle(obj, y, M=4.0)
        self.assertAlmostEqual(result.lam, 1.0, delta=3e-5)
        assert_allclose(result.x, y / 2, atol=1e-5)
        self.assertEqual(result.counters.hessian_evals, 1)

    def test_movement_identity_for_growing_M(self):
        obj = make_worst_case(8)
        y = np.linspace(-0.5, 0.5, 8)
        steps = []
        for M in (1.0, 10.0, 100.0, 1000.0):
            result = cr_oracle(obj, y, M)
            self.assertFalse(result.floor_hit)
            self.assertAlmostEqual(result.lam / (0.5 * M * result.step_norm), 1.0, delta=2e-5)
            certificate = movement_bound(result.x, y, result.lam, 2, math.sqrt(M / 2))
            self.assertTrue(certificate.holds or abs(certificate.distance - result.lam / (M / 2)) < 1e-4 * certificate.distance)
            steps.append(result.step_norm)
        self.assertEqual(steps, sorted(steps, reverse=True))

    def test_fixpoint_on_random_logistic_points(self):
        rng = np.random.default_rng(8)
        features = rng.normal(size=(80, 10))
        features /= np.linalg.norm(features, axis=1, keepdims=True)
        labels = np.where(rng.random(80) < 0.5, -1.0, 1.0)
        obj = make_logistic(Dataset(features, labels))
        checked = 0
        for _ in range(50):
            y = rng.normal(scale=2.0, size=10)
            M = float(10.0 ** rng.uniform(-2, 2))
            result = cr_oracle(obj, y, M)
            if result.floor_hit:
                continue
            checked += 1
            H, g = obj.hessian(y), obj.gradient(y)
            solved = np.linalg.solve(H + result.lam * np.eye(10), g)
            ratio = result.lam / (0.5 * M * np.linalg.norm(solved))
            self.assertLessEqual(abs(ratio - 1.0), 1e-5 + 1e-9, ratio)
            movement = 0.5 * M * np.linalg.norm(result.x - y)
            self.assertAlmostEqual(result.lam / movement, 1.0, delta=2e-5)
        self.assertGreater(checked, 40)

    def test_ms_condition_when_M_dominates_lipschitz(self):
        obj = make_worst_case(6)
        sigma = 0.5
        M = 1.1 * obj.hessian_lipschitz / sigma
        rng = np.random.default_rng(1)
        for _ in range(5):
            result = cr_oracle(obj, rng.normal(size=6), M)
            self.assertTrue(result.satisfies_ms(sigma))

    def test_stationary(self):
        obj = make_worst_case(3)
        result = cr_oracle(obj, np.ones(3), 5.0)
        self.assertTrue(result.stationary)
        assert_allclose(result.x, np.ones(3))
        self.assertEqual(result.lam, 1e-10)


class AdaptiveNewtonTests(SimpleTestCase):

    def test_lazy_quadratic_single_solve(self):
        obj = make_quadratic(np.diag([2.0, 1.0]), np.array([1.0, 1.0]))
        result = amsn(obj, np.zeros(2), 0.7, sigma=0.5, lazy=True)
        self.assertEqual(result.lam, 0.7)
        self.assertEqual(result.counters.linear_solves, 1)
        self.assertFalse(result.floor_hit)

    def test_non_lazy_quadratic_hits_floor(self):
        obj = make_quadratic(np.diag([2.0, 1.0]), np.array([1.0, 1.0]))
        result = amsn(obj, np.zeros(2), 0.7, sigma=0.5, lazy=False)
        self.assertTrue(result.floor_hit)
        self.assertGreaterEqual(result.lam, 1e-10)
        self.assertLess(result.lam, 0.7)

    def test_scalar_cube_bracketing_and_counter(self):
        obj = CubeOverSix()
        y = np.array([1.0])
        result = amsn(obj, y, 0.05, sigma=0.2, lazy=False)
        self.assertGreater(result.lam, 0.05)
        self.assertFalse(result.floor_hit)
        self.assertTrue(check_ms(obj, y, result.lam, 0.2).passed)
        self.assertFalse(check_ms(obj, y, result.lam / 2, 0.2).passed)
        self.assertLessEqual(result.counters.linear_solves, solve_count_limit(result.lam, 0.05))

        # fine grid: the smallest passing lambda sits inside (lam / 2, lam]
        grid = np.geomspace(1e-3, 1e2, 4000)
        passing = [lam for lam in grid if check_ms(obj, y, lam, 0.2).passed]
        self.assertGreater(min(passing), result.lam / 2)
        self.assertLessEqual(min(passing), result.lam * (1 + 1e-2))

    def test_counter_bound_on_logistic(self):
        rng = np.random.default_rng(4)
        features = rng.normal(size=(40, 5))
        features /= np.linalg.norm(features, axis=1, keepdims=True)
        labels = np.where(rng.random(40) < 0.5, -1.0, 1.0)
        obj = make_logistic(Dataset(features, labels))
        y = rng.normal(size=5)
        for lam_prime in (1e-6, 1e-3, 1.0, 1e3):
            result = amsn(obj, y, lam_prime, sigma=0.5, lazy=False)
            if not result.floor_hit:
                self.assertLessEqual(result.counters.linear_solves, solve_count_limit(result.lam, lam_prime))
            self.assertTrue(result.satisfies_ms(0.5))

    def test_movement_bound_on_chain(self):
        obj = make_worst_case(10)
        sigma = 0.5
        c = math.sqrt(2 * obj.hessian_lipschitz / sigma) / sigma
        rng = np.random.default_rng(9)
        for _ in range(5):
            y = rng.normal(size=10)
            result = amsn(obj, y, 1e-4, sigma, lazy=False)
            if result.lam > 1e-4:
                self.assertTrue(movement_bound(result.x, y, result.lam, 2, c).holds)

    def test_first_call_is_never_lazy(self):
        obj = make_quadratic(np.diag([2.0, 1.0]), np.array([1.0, 1.0]))
        oracle = AdaptiveNewtonOracle(obj, sigma=0.5, lazy=True, lazy_first=False)
        self.assertTrue(oracle(np.zeros(2), 0.7, first=True).floor_hit)
        self.assertEqual(oracle(np.zeros(2), 0.7).counters.linear_solves, 1)


class AdaptiveFirstOrderTests(SimpleTestCase):

    def test_quadratic_passes_at_query(self):
        obj = make_quadratic(np.diag([4.0, 1.0, 0.5]), np.array([1.0, 2.0, 3.0]))
        result = amsn_fo(obj, np.zeros(3), 0.3, sigma=0.5)
        self.assertEqual(result.lam, 0.3)
        self.assertEqual(result.counters.linear_solves, 1)
        self.assertEqual(result.counters.hessian_evals, 0)

    def test_stationary_query_uses_no_hvps(self):
        obj = make_worst_case(5)
        result = amsn_fo(obj, np.ones(5), 0.3, sigma=0.5)
        assert_allclose(result.x, np.ones(5))
        self.assertEqual(result.lam, 0.3)
        self.assertEqual(result.counters.hvps, 0)

    def test_scalar_cube_doubling(self):
        lam = 0.05
        while True:
            x = 1 - 0.5 / (1 + lam)
            if abs(x - 1 + 0.5 * x * x / lam) <= 0.2 * abs(x - 1):
                break
            lam *= 2
        result = amsn_fo(CubeOverSix(), np.array([1.0]), 0.05, sigma=0.2)
        self.assertAlmostEqual(result.lam, lam)
        self.assertAlmostEqual(result.lam, 0.8)
        assert_allclose(result.x, [1 - 0.5 / 1.8], rtol=1e-10)

    def test_ms_condition_on_chain(self):
        obj = make_worst_case(30)
        result = amsn_fo(obj, np.zeros(30), 1e-3, sigma=0.5)
        self.assertTrue(result.satisfies_ms(0.5))
        self.assertGreater(result.counters.hvps, 0)


class MovementBoundTests(SimpleTestCase):

    def test_cases(self):
        x, y = np.array([1.0, 0.0]), np.zeros(2)
        self.assertTrue(movement_bound(x, y, 4.0, 2, 2.0).holds)
        self.assertFalse(movement_bound(x, y, 4.1, 2, 2.0).holds)
        self.assertTrue(movement_bound(x, y, 100.0, math.inf, 1.0).holds)
        self.assertFalse(movement_bound(x, y, 1.0, 1, 0.5).holds)
