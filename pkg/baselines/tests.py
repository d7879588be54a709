import math

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose

from accel.trace import RunBudget
from baselines.methods import (
    MethodConfig,
    baseline_run,
    estimate_distance,
    iterate_oracle_run,
    newton_reference,
    song_schedule,
    tune_step_size,
)
from baselines.serializers import MethodConfigSerializer
from dataset.synthetic import synthetic_gaussian
from MSAccel.exceptions import ConfigError
from objectives.functions import make_logistic, make_quadratic, make_worst_case


def small_logistic(n=60, d=6, seed=5):
    return make_logistic(synthetic_gaussian(n, d, seed))


class MethodConfigTests(SimpleTestCase):

    def test_required_fields(self):
        with self.assertRaises(ConfigError):
            MethodConfig('GD')
        with self.assertRaises(ConfigError):
            MethodConfig('CR')
        with self.assertRaises(ConfigError):
            MethodConfig('LBFGS')
        self.assertEqual(MethodConfig('CR', H=3.0).cubic_M, 6.0)

    def test_serializer(self):
        serializer = MethodConfigSerializer(data={'method': 'AGD', 'eta': 10})
        self.assertTrue(serializer.is_valid(), serializer.errors)
        self.assertEqual(serializer.save().eta, 10.0)
        serializer = MethodConfigSerializer(data={'method': 'ACR'})
        self.assertFalse(serializer.is_valid())
        self.assertIn('H', serializer.errors)
        serializer = MethodConfigSerializer(data={'method': 'ITERATE_AMSN', 'sigma': 1.0})
        self.assertFalse(serializer.is_valid())


class ReferenceSolverTests(SimpleTestCase):

    def test_closed_forms(self):
        assert_allclose(newton_reference(make_worst_case(4)), np.ones(4))
        obj = make_quadratic(np.diag([2.0, 4.0]), np.array([2.0, 2.0]))
        assert_allclose(newton_reference(obj), [1.0, 0.5])

    def test_logistic_gradient_tolerance(self):
        obj = small_logistic()
        x = newton_reference(obj)
        self.assertLess(np.linalg.norm(obj.gradient(x)), 1e-12)

    def test_distance_estimate(self):
        obj = make_quadratic(np.eye(3), np.array([3.0, 0.0, 4.0]))
        self.assertAlmostEqual(estimate_distance(obj, np.zeros(3)), 5.0, places=8)


class BaselineRunTests(SimpleTestCase):

    def test_newton_solves_quadratic_in_one_step(self):
        obj = make_quadratic(np.array([[3.0, 1.0], [1.0, 2.0]]), np.array([1.0, -1.0]))
        trace = baseline_run(
            obj, np.zeros(2), MethodConfig('NEWTON'), RunBudget(max_oracle_calls=1), reference_opt=obj.minimizer(),
        )
        self.assertEqual(len(trace), 2)
        self.assertLessEqual(trace.final_gap(), 1e-10)

    def test_gd_contracts_geometrically(self):
        obj = make_quadratic(np.eye(2), np.zeros(2))
        x0 = np.array([1.0, -2.0])
        eta = 0.3
        trace = baseline_run(obj, x0, MethodConfig('GD', eta=eta), RunBudget(max_oracle_calls=10), np.zeros(2))
        for rec in trace.records:
            self.assertAlmostEqual(rec.f, 0.5 * (1 - eta) ** (2 * rec.t) * 5.0, places=12)

    def test_agd_envelope(self):
        Q = np.diag(np.geomspace(1e-3, 1.0, 10))
        obj = make_quadratic(Q, np.ones(10))
        eta = 1.0
        x_star = obj.minimizer()
        x0 = np.zeros(10)
        trace = baseline_run(obj, x0, MethodConfig('AGD', eta=eta), RunBudget(max_oracle_calls=100), x_star)
        envelope = 2 * np.sum((x0 - x_star) ** 2) / (eta * 101 ** 2)
        self.assertLessEqual(trace.records[100].gap, envelope)

    def test_cr_descends_with_known_constant(self):
        obj = make_worst_case(30)
        trace = baseline_run(obj, np.zeros(30), MethodConfig('CR', H=obj.hessian_lipschitz), RunBudget(max_oracle_calls=20))
        values = [r.f for r in trace.records]
        for before, after in zip(values, values[1:]):
            self.assertLessEqual(after, before + 1e-12)

    def test_acr_and_song_make_progress(self):
        obj = small_logistic()
        reference = newton_reference(obj)
        for cfg in (MethodConfig('ACR', H=1.0), MethodConfig('SONG', H=1.0)):
            trace = baseline_run(obj, np.zeros(obj.dim), cfg, RunBudget(max_oracle_calls=30), reference)
            self.assertLess(trace.final_gap(), 0.5 * trace.records[0].gap)
            self.assertEqual(trace.oracle_calls, 30)

    def test_song_schedule(self):
        self.assertAlmostEqual(song_schedule(3, H=1.0, R=0.5), 1.0)
        self.assertEqual(song_schedule(0, H=1.0, R=1.0), 0.0)

    def test_song_records_potential_terms(self):
        obj = small_logistic()
        trace = baseline_run(
            obj, np.zeros(obj.dim), MethodConfig('SONG', H=1.0, R=2.0), RunBudget(max_oracle_calls=5),
            newton_reference(obj),
        )
        rec = trace.records[2]
        A1, A2 = song_schedule(1, 1.0, 2.0), song_schedule(2, 1.0, 2.0)
        self.assertAlmostEqual(rec.A, A2)
        self.assertAlmostEqual(rec.lam_prime, A2 / (A2 - A1) ** 2)
        self.assertTrue(math.isfinite(rec.D))


class IterateOracleTests(SimpleTestCase):

    def test_first_order_lazy_pass_through(self):
        obj = make_quadratic(np.diag([2.0, 1.0, 0.5]), np.array([1.0, 1.0, 1.0]))
        trace = iterate_oracle_run(obj, np.zeros(3), 'AMSN_FO', lambda1=0.1, budget=RunBudget(max_oracle_calls=6))
        for rec in trace.records[1:]:
            self.assertAlmostEqual(rec.lam, 0.1 * 2.0 ** (-rec.t))

    def test_stationary_start(self):
        obj = make_worst_case(5)
        trace = iterate_oracle_run(
            obj, np.ones(5), 'AMSN', budget=RunBudget(max_oracle_calls=10), reference_opt=np.ones(5),
        )
        self.assertEqual(len(trace), 1)
        self.assertEqual(trace.status, 'stationary')
        self.assertEqual(trace.final_gap(), 0.0)

    def test_quantitative_descent_on_chain(self):
        obj = make_worst_case(50)
        sigma = 0.5
        trace = iterate_oracle_run(obj, np.zeros(50), 'AMSN', sigma=sigma, budget=RunBudget(max_oracle_calls=30))
        steps = [call['step_norm'] for call in trace.calls]
        for prev, cur, step in zip(trace.records, trace.records[1:], steps):
            bound = prev.f - 0.5 * cur.lam * (1 - sigma ** 2) * step ** 2 + 1e-9
            self.assertLessEqual(cur.f, bound)

    def test_unknown_oracle(self):
        with self.assertRaises(ConfigError):
            iterate_oracle_run(make_worst_case(2), np.zeros(2), 'CR')

    def test_unbounded_budget_rejected(self):
        obj = make_worst_case(2)
        for budget in (None, RunBudget()):
            with self.assertRaises(ConfigError):
                baseline_run(obj, np.zeros(2), MethodConfig('NEWTON'), budget)
            with self.assertRaises(ConfigError):
                iterate_oracle_run(obj, np.zeros(2), 'AMSN', budget=budget)


class StepSizeTuningTests(SimpleTestCase):

    def test_interior_winner(self):
        obj = small_logistic()
        eta, trace = tune_step_size(obj, np.zeros(obj.dim), 'GD', RunBudget(max_oracle_calls=20), grid=[0.1, 1.0, 10.0, 1e4])
        self.assertIn(eta, (1.0, 10.0))
        self.assertEqual(trace.params['eta'], eta)

    def test_edge_winner_extends_grid_once(self):
        obj = make_quadratic(np.eye(2), np.zeros(2))
        with self.assertLogs('baselines.methods', level='INFO') as logs:
            eta, _ = tune_step_size(obj, np.ones(2), 'GD', RunBudget(max_oracle_calls=3), grid=[0.01, 0.1])
        self.assertAlmostEqual(eta, 1.0)
        self.assertTrue(any('edge' in line for line in logs.output))
