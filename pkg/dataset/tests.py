import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal

from dataset.libsvm import parse_libsvm, serialize_libsvm
from dataset.synthetic import normalize_rows, synthetic_gaussian
from MSAccel.exceptions import InvalidInputError, LibSVMParseError
from objectives.functions import Dataset


class ParseLibSVMTests(SimpleTestCase):

    def test_single_line(self):
        data = parse_libsvm('+1 1:0.5 3:0.25\n')
        assert_array_equal(data.labels, [1.0])
        assert_array_equal(data.features, [[0.5, 0.0, 0.25]])

    def test_label_only_line(self):
        data = parse_libsvm('-1 2:1\n-1\n')
        assert_array_equal(data.features[1], [0.0, 0.0])
        self.assertEqual(data.labels[1], -1.0)

    def test_rows_padded_to_largest_index(self):
        data = parse_libsvm('1 1:1\n0 4:2\n')
        self.assertEqual(data.features.shape, (2, 4))
        assert_array_equal(data.labels, [1.0, -1.0])

    def test_declared_width(self):
        data = parse_libsvm('+1 2:1\n', n_features=5)
        self.assertEqual(data.d, 5)

    def test_errors_carry_line_numbers(self):
        cases = [
            '+1 1:1\n+1 3:1 2:1\n',
            '+1 1:1\n\n+1 2:1 2:3\n',
            '+1 1:abc\n',
            '2 1:1\n',
            '+1 0:1\n',
        ]
        lines = [2, 3, 1, 1, 1]
        for text, line in zip(cases, lines):
            with self.assertRaises(LibSVMParseError) as ctx:
                parse_libsvm(text)
            self.assertEqual(ctx.exception.line_number, line)
            self.assertIn(f'line {line}', str(ctx.exception))

    def test_serialize_then_parse_preserves_dense_matrix(self):
        rng = np.random.default_rng(0)
        features = rng.normal(size=(6, 4)) * (rng.random((6, 4)) < 0.5)
        labels = np.array([1.0, -1.0, 1.0, 1.0, -1.0, -1.0])
        data = Dataset(features, labels)
        again = parse_libsvm(serialize_libsvm(data), n_features=4)
        assert_array_equal(again.features, features)
        assert_array_equal(again.labels, labels)


class NormalizeRowsTests(SimpleTestCase):

    def test_rows(self):
        data = Dataset(np.array([[3.0, 4.0], [0.0, 0.0], [1.0, 0.0]]), np.array([1.0, -1.0, 1.0]))
        with self.assertLogs('dataset.synthetic', level='WARNING'):
            out = normalize_rows(data)
        assert_allclose(out.features[0], [0.6, 0.8])
        assert_array_equal(out.features[1], [0.0, 0.0])
        assert_allclose(out.features[2], [1.0, 0.0], atol=1e-15)
        self.assertEqual(out.zero_rows, 1)

    def test_idempotent(self):
        data = synthetic_gaussian(10, 3, seed=2)
        assert_allclose(normalize_rows(data).features, data.features, atol=1e-15)


class SyntheticGaussianTests(SimpleTestCase):

    def test_deterministic(self):
        a = synthetic_gaussian(20, 5, seed=7)
        b = synthetic_gaussian(20, 5, seed=7)
        self.assertEqual(a.features.tobytes(), b.features.tobytes())
        self.assertEqual(a.fingerprint(), b.fingerprint())
        self.assertNotEqual(a.fingerprint(), synthetic_gaussian(20, 5, seed=8).fingerprint())

    def test_balanced_labels_and_unit_rows(self):
        data = synthetic_gaussian(30, 4, seed=1)
        self.assertEqual(int(np.sum(data.labels > 0)), 15)
        self.assertEqual(int(np.sum(data.labels < 0)), 15)
        assert_allclose(np.linalg.norm(data.features, axis=1), np.ones(30))

    def test_means_on_sphere(self):
        _, mu1, mu2 = synthetic_gaussian(4, 6, seed=3, return_means=True)
        self.assertAlmostEqual(np.linalg.norm(mu1), 0.5, places=12)
        self.assertAlmostEqual(np.linalg.norm(mu2), 0.5, places=12)

    def test_odd_n_rejected(self):
        with self.assertRaises(InvalidInputError):
            synthetic_gaussian(5, 2, seed=0)
