import math

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose

from MSAccel.exceptions import InvalidInputError
from objectives.functions import (
    Dataset,
    hessian_lipschitz_bound,
    make_logistic,
    make_quadratic,
    make_worst_case,
)


def finite_difference_gradient(obj, x, h=1e-6):
    grad = np.zeros_like(x)
    for i in range(x.shape[0]):
        e = np.zeros_like(x)
        e[i] = h
        grad[i] = (obj.value(x + e) - obj.value(x - e)) / (2 * h)
    return grad


class LogisticObjectiveTests(SimpleTestCase):

    def setUp(self):
        rng = np.random.default_rng(3)
        features = rng.normal(size=(20, 4))
        labels = np.where(rng.random(20) < 0.5, -1.0, 1.0)
        self.data = Dataset(features, labels)
        self.obj = make_logistic(self.data)

    def test_value_at_origin_is_log_two(self):
        data = Dataset(np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([1.0, -1.0]))
        obj = make_logistic(data)
        self.assertAlmostEqual(obj.value(np.zeros(2)), math.log(2), places=12)
        assert_allclose(obj.gradient(np.zeros(2)), [-0.25, 0.25], atol=1e-15)

    def test_value_is_stable_for_huge_margins(self):
        data = Dataset(np.array([[1.0]]), np.array([1.0]))
        obj = make_logistic(data)
        self.assertAlmostEqual(obj.value(np.array([1000.0])), 0.0, places=12)
        self.assertAlmostEqual(obj.value(np.array([-1000.0])), 1000.0, places=9)
        self.assertTrue(np.all(np.isfinite(obj.gradient(np.array([-1000.0])))))

    def test_gradient_matches_finite_differences(self):
        x = np.array([0.3, -0.2, 0.5, 0.1])
        assert_allclose(self.obj.gradient(x), finite_difference_gradient(self.obj, x), atol=1e-8)

    def test_hessian_is_symmetric_and_matches_hvp(self):
        x = np.array([0.3, -0.2, 0.5, 0.1])
        v = np.array([1.0, 2.0, -1.0, 0.5])
        H = self.obj.hessian(x)
        self.assertTrue(np.array_equal(H, H.T))
        assert_allclose(H @ v, self.obj.hvp(x, v), rtol=1e-12, atol=1e-14)
        self.assertGreaterEqual(np.linalg.eigvalsh(H).min(), -1e-14)

    def test_hessian_eigenvalues_within_curvature_bound(self):
        rng = np.random.default_rng(9)
        ceiling = 0.25 * np.max(np.sum(self.data.features ** 2, axis=1))
        for _ in range(50):
            eigenvalues = np.linalg.eigvalsh(self.obj.hessian(rng.normal(scale=3.0, size=4)))
            self.assertGreaterEqual(eigenvalues.min(), -1e-12)
            self.assertLessEqual(eigenvalues.max(), ceiling * (1 + 1e-12))

    def test_inputs_are_copied_before_freezing(self):
        features = np.ones((2, 3))
        labels = np.array([1.0, -1.0])
        data = Dataset(features, labels)
        self.assertTrue(features.flags.writeable)
        self.assertTrue(labels.flags.writeable)
        self.assertFalse(data.features.flags.writeable)
        features[0, 0] = 5.0
        self.assertEqual(data.features[0, 0], 1.0)

    def test_dimension_mismatch_raises(self):
        with self.assertRaises(InvalidInputError):
            self.obj.value(np.zeros(3))

    def test_hessian_lipschitz_bound(self):
        data = Dataset(np.array([[3.0, 4.0]]), np.array([1.0]))
        self.assertAlmostEqual(hessian_lipschitz_bound(data), 125.0, places=9)

    def test_fingerprint_tracks_content(self):
        other = Dataset(self.data.features.copy(), -self.data.labels)
        self.assertEqual(self.obj.fingerprint(), make_logistic(self.data).fingerprint())
        self.assertNotEqual(self.obj.fingerprint(), make_logistic(other).fingerprint())


class CubicChainTests(SimpleTestCase):

    def test_value_at_origin_and_minimizer(self):
        obj = make_worst_case(5)
        self.assertEqual(obj.value(np.zeros(5)), 1.0)
        self.assertEqual(obj.value(np.ones(5)), 0.0)
        assert_allclose(obj.gradient(np.ones(5)), np.zeros(5))
        assert_allclose(obj.minimizer(), np.ones(5))

    def test_gradient_and_hvp_agree_with_dense_forms(self):
        obj = make_worst_case(6)
        x = np.array([0.2, -0.4, 1.1, 0.7, 0.0, 2.0])
        v = np.arange(6, dtype=float)
        assert_allclose(obj.gradient(x), finite_difference_gradient(obj, x), atol=1e-6)
        H = obj.hessian(x)
        self.assertTrue(np.array_equal(H, H.T))
        assert_allclose(H @ v, obj.hvp(x, v), atol=1e-12)

    def test_value_matches_scalar_loop(self):
        rng = np.random.default_rng(4)
        for d in (1, 2, 7, 30):
            obj = make_worst_case(d)
            for _ in range(10):
                x = rng.normal(size=d)
                total = abs(x[0] - 1.0) ** 3
                for i in range(1, d):
                    total += abs(x[i] - x[i - 1]) ** 3
                self.assertAlmostEqual(obj.value(x), total, delta=1e-12 * (1 + total))

    def test_declared_hessian_lipschitz_constant(self):
        obj = make_worst_case(4)
        self.assertAlmostEqual(obj.hessian_lipschitz, 24 * math.sqrt(2))
        rng = np.random.default_rng(0)
        for _ in range(20):
            x, y = rng.normal(size=4), rng.normal(size=4)
            gap = np.linalg.norm(obj.hessian(x) - obj.hessian(y), 2)
            self.assertLessEqual(gap, obj.hessian_lipschitz * np.linalg.norm(x - y) + 1e-12)


class HessianVectorProductTests(SimpleTestCase):

    def test_hvp_matches_dense_hessian(self):
        rng = np.random.default_rng(12)
        features = rng.normal(size=(30, 6))
        labels = np.where(rng.random(30) < 0.5, -1.0, 1.0)
        Q = rng.normal(size=(6, 6))
        Q = Q @ Q.T
        objectives = [
            make_logistic(Dataset(features, labels)),
            make_worst_case(6),
            make_quadratic(0.5 * (Q + Q.T), rng.normal(size=6)),
        ]
        for obj in objectives:
            for _ in range(100):
                x, v = rng.normal(size=6), rng.normal(size=6)
                dense = obj.hessian(x) @ v
                self.assertLessEqual(
                    np.linalg.norm(dense - obj.hvp(x, v)), 1e-10 * (1 + np.linalg.norm(dense)), obj.name,
                )


class QuadraticTests(SimpleTestCase):

    def test_values(self):
        obj = make_quadratic(np.eye(2), np.array([1.0, 0.0]))
        self.assertEqual(obj.value(np.array([1.0, 0.0])), -0.5)
        assert_allclose(obj.gradient(np.array([1.0, 0.0])), [0.0, 0.0])
        assert_allclose(obj.minimizer(), [1.0, 0.0])

    def test_asymmetric_matrix_rejected(self):
        with self.assertRaises(InvalidInputError):
            make_quadratic(np.array([[1.0, 2.0], [0.0, 1.0]]), np.zeros(2))
