import math

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose

from accel.audit import audit_potential
from accel.schemes import a_prime, ms_bisection_run, optimal_ms_run
from accel.trace import RunBudget
from baselines.methods import newton_reference
from dataset.synthetic import synthetic_gaussian
from MSAccel.exceptions import BisectionFailure, ConfigError, NonConvergenceError
from objectives.functions import make_logistic, make_quadratic, make_worst_case
from oracles.ms_oracles import (
    AdaptiveNewtonOracle,
    CubicNewtonOracle,
    GradientStepOracle,
    MSOracle,
    OracleCounters,
    OracleResult,
)


class FixedLambdaOracle(MSOracle):
    """Gradient step that always reports the same lambda"""

    kind = 'FIXED'
    sigma = 0.5

    def __init__(self, obj, lam, eta=0.1):
        super().__init__(obj)
        self.lam = lam
        self.eta = eta
        self.queries = []

    def __call__(self, y, lam_prime, first=False):
        self.queries.append(lam_prime)
        g = self.obj.gradient(y)
        return OracleResult(
            x=y - self.eta * g, lam=self.lam, ms_residual=math.nan, step_norm=float(np.linalg.norm(self.eta * g)),
            counters=OracleCounters(gradient_evals=1), kind=self.kind, lambda_query=lam_prime,
        )


class SteppedLambdaOracle(FixedLambdaOracle):
    """Reports lambda 1 below lam_prime=1 and lam_prime/3 from there on"""

    def __call__(self, y, lam_prime, first=False):
        self.lam = 1.0 if lam_prime < 1.0 else lam_prime / 3.0
        return super().__call__(y, lam_prime, first)


class FailingOracle(MSOracle):
    kind = 'FAIL'
    sigma = 0.5

    def __init__(self, obj, fail_at):
        super().__init__(obj)
        self.calls = 0
        self.fail_at = fail_at

    def __call__(self, y, lam_prime, first=False):
        self.calls += 1
        if self.calls > self.fail_at:
            raise NonConvergenceError('synthetic failure')
        return OracleResult(x=y * 0.5, lam=lam_prime, ms_residual=0.0, step_norm=0.0, kind=self.kind)


def small_logistic(n=100, d=20, seed=1):
    return make_logistic(synthetic_gaussian(n, d, seed))


class APrimeTests(SimpleTestCase):

    def test_examples(self):
        self.assertEqual(a_prime(1.0, 0.0), 1.0)
        self.assertEqual(a_prime(1.0, 2.0), 2.0)
        self.assertEqual(a_prime(4.0, 0.0), 0.25)

    def test_defining_quadratic(self):
        for lam, A in ((0.3, 7.0), (1e-6, 1e3), (1e4, 1e-2)):
            a = a_prime(lam, A)
            self.assertAlmostEqual(lam * a * a / (A + a), 1.0, delta=1e-12)


class OptimalMSTests(SimpleTestCase):

    def test_gradient_oracle_transcript(self):
        """Q = I, b = 0 with eta = 1/2: every oracle answer is (y/2, 2)"""
        obj = make_quadratic(np.eye(2), np.zeros(2))
        x0 = np.array([2.0, 0.0])
        trace = optimal_ms_run(
            obj, x0, GradientStepOracle(obj, 0.5), alpha=2.0, lambda0=0.1,
            budget=RunBudget(max_oracle_calls=3), reference_opt=np.zeros(2),
        )
        self.assertEqual(len(trace), 4)

        # first step: lambda'_1 = lambda_1 = 2, a'_1 = 1/2, x_1 = 1, v_1 = 2 - 0.5 * 1
        first = trace.records[1]
        self.assertEqual((first.lam, first.lam_prime, first.up_flag), (2.0, 2.0, False))
        self.assertAlmostEqual(first.A, 0.5)
        self.assertAlmostEqual(first.f, 0.5)

        # second step: lambda' = 1 undershoots lambda = 2, gamma = 1/2
        second = trace.records[2]
        self.assertEqual((second.lam, second.lam_prime, second.up_flag), (2.0, 1.0, True))
        a_hat = (1 + math.sqrt(3)) / 2
        self.assertAlmostEqual(second.A_prime, 0.5 + a_hat)
        self.assertAlmostEqual(second.A, 0.5 + a_hat / 2)
        self.assertAlmostEqual(second.f, 0.5 * 0.75 ** 2)

        # third step replayed by hand from (x2, v2, A2)
        x, A = 0.75, 0.5 + a_hat / 2
        y1 = (0.5 * 1.0 + a_hat * 1.5) / (0.5 + a_hat)
        v = 1.5 - (a_hat / 2) * (y1 / 2)
        lam_prime = 2.0
        a3 = (1 + math.sqrt(1 + 4 * lam_prime * A)) / (2 * lam_prime)
        y2 = (A * x + a3 * v) / (A + a3)
        third = trace.records[3]
        self.assertEqual(third.lam_prime, 2.0)
        self.assertFalse(third.up_flag)
        self.assertAlmostEqual(third.A, A + a3)
        self.assertAlmostEqual(third.f, 0.5 * (y2 / 2) ** 2)

    def test_invariants_on_chain(self):
        obj = make_worst_case(20)
        trace = optimal_ms_run(
            obj, np.zeros(20), AdaptiveNewtonOracle(obj, sigma=0.5),
            budget=RunBudget(max_oracle_calls=25), reference_opt=np.ones(20),
        )
        previous = trace.records[0]
        for rec in trace.records[1:]:
            self.assertGreater(rec.A, previous.A)
            a_hat = rec.A_prime - previous.A
            self.assertAlmostEqual(rec.lam_prime * a_hat ** 2 / (previous.A + a_hat), 1.0, delta=1e-10)
            if rec.up_flag:
                self.assertLess(rec.lam_prime / rec.lam, 1.0)
            previous = rec
        for rec, nxt in zip(trace.records[1:], trace.records[2:]):
            expected_next = rec.lam_prime * 2.0 if rec.up_flag else rec.lam_prime / 2.0
            self.assertAlmostEqual(nxt.lam_prime, expected_next)
        self.assertTrue(audit_potential(trace).passed)
        for name in ('hess_evals', 'lin_solves', 'grad_evals'):
            column = [getattr(r, name) for r in trace.records]
            self.assertEqual(column, sorted(column))

    def test_logistic_audit_passes(self):
        obj = small_logistic()
        reference = newton_reference(obj)
        trace = optimal_ms_run(
            obj, np.zeros(obj.dim), AdaptiveNewtonOracle(obj, sigma=0.5),
            budget=RunBudget(max_oracle_calls=50), reference_opt=reference,
        )
        report = audit_potential(trace)
        self.assertTrue(report.passed, report.failed())
        self.assertGreater(report.checks['potential'].evaluated, 10)
        best = [r.best_f for r in trace.records]
        self.assertEqual(best, sorted(best, reverse=True))

    def test_exact_oracle_all_down_steps_grow_quadratically(self):
        obj = make_quadratic(np.diag([1.0, 0.1]), np.array([1.0, 1.0]))
        oracle = AdaptiveNewtonOracle(obj, sigma=0.5, lazy=True, lazy_first=True)
        trace = optimal_ms_run(obj, np.zeros(2), oracle, lambda0=1.0, budget=RunBudget(max_oracle_calls=12))
        steps = trace.records[1:]
        self.assertTrue(all(not r.up_flag for r in steps))
        smallest = min(1.0 / r.lam_prime for r in steps)
        for T, rec in enumerate(steps, start=1):
            self.assertGreaterEqual(rec.A, (T / 2) ** 2 * smallest)

    def test_single_step_exact_potential(self):
        obj = make_quadratic(np.diag([2.0, 0.5]), np.array([1.0, -1.0]))
        oracle = AdaptiveNewtonOracle(obj, sigma=0.5, lazy=True, lazy_first=True)
        trace = optimal_ms_run(
            obj, np.zeros(2), oracle, budget=RunBudget(max_oracle_calls=1), reference_opt=obj.minimizer(),
        )
        self.assertEqual(len(trace), 2)
        report = audit_potential(trace, sigma=0.0)
        self.assertTrue(report.checks['potential'].passed)
        self.assertGreaterEqual(report.checks['potential'].worst_slack, 0.0)

    def test_damping_variants_run(self):
        obj = small_logistic(n=40, d=5)
        for damping in ('on', 'argmin', 'off'):
            trace = optimal_ms_run(
                obj, np.zeros(5), AdaptiveNewtonOracle(obj), damping=damping,
                budget=RunBudget(max_oracle_calls=10),
            )
            self.assertEqual(trace.params['damping'], damping)
            self.assertEqual(trace.oracle_calls, 10)

    def test_config_validation(self):
        obj = make_worst_case(3)
        with self.assertRaises(ConfigError):
            optimal_ms_run(obj, np.zeros(3), AdaptiveNewtonOracle(obj), alpha=1.0)
        with self.assertRaises(ConfigError):
            optimal_ms_run(obj, np.zeros(3), AdaptiveNewtonOracle(obj), damping='sometimes')

    def test_oracle_error_carries_context(self):
        obj = make_quadratic(np.eye(2), np.zeros(2))
        with self.assertRaises(NonConvergenceError) as ctx:
            optimal_ms_run(obj, np.ones(2), FailingOracle(obj, fail_at=3), budget=RunBudget(max_oracle_calls=10))
        self.assertEqual(ctx.exception.iteration, 3)
        self.assertEqual(len(ctx.exception.trace), 4)
        self.assertEqual(ctx.exception.trace.status, 'error')

    def test_target_gap_stops_run(self):
        obj = make_quadratic(np.eye(2), np.zeros(2))
        trace = optimal_ms_run(
            obj, np.ones(2), GradientStepOracle(obj, 0.5),
            budget=RunBudget(max_oracle_calls=500, target_gap=1e-6), reference_opt=np.zeros(2),
        )
        self.assertEqual(trace.status, 'target')
        self.assertLessEqual(trace.final_gap(), 1e-6)


class MSBisectionTests(SimpleTestCase):

    def test_constant_lambda_valid_without_expansion(self):
        obj = make_quadratic(np.eye(2), np.zeros(2))
        trace = ms_bisection_run(
            obj, np.ones(2), GradientStepOracle(obj, 1.0), rho=4.0, lambda0_guess=2.0,
            budget=RunBudget(max_oracle_calls=1),
        )
        self.assertEqual(trace.oracle_calls, 1)
        self.assertEqual(trace.records[1].lam_prime, 2.0)
        self.assertEqual(trace.records[1].lam, 1.0)

    def test_doubling_probe_count_and_warm_start(self):
        obj = make_quadratic(np.eye(2), np.zeros(2))
        oracle = FixedLambdaOracle(obj, lam=1.0)
        trace = ms_bisection_run(obj, np.ones(2), oracle, rho=4.0, lambda0_guess=0.1, budget=RunBudget(max_oracle_calls=5))
        assert_allclose(oracle.queries, [0.1, 0.2, 0.4, 0.8, 1.6])
        self.assertEqual(len(trace), 2)
        self.assertAlmostEqual(trace.records[1].lam_prime, 1.6)

        # returned lambda exceeded the guess, so the next guess doubles
        oracle = FixedLambdaOracle(obj, lam=1.0)
        ms_bisection_run(obj, np.ones(2), oracle, rho=4.0, lambda0_guess=0.1, budget=RunBudget(max_oracle_calls=6))
        self.assertAlmostEqual(oracle.queries[5], 0.2)

    def test_warm_start_follows_returned_lambda(self):
        obj = make_quadratic(np.eye(2), np.zeros(2))
        oracle = SteppedLambdaOracle(obj, lam=1.0)
        trace = ms_bisection_run(obj, np.ones(2), oracle, rho=4.0, lambda0_guess=0.8, budget=RunBudget(max_oracle_calls=3))
        # 0.8 is low, 1.6 is valid with lambda 0.533 below the guess
        self.assertAlmostEqual(trace.records[1].lam_prime, 1.6)
        self.assertAlmostEqual(trace.records[1].lam, 1.6 / 3.0)
        self.assertAlmostEqual(oracle.queries[2], 0.4)

    def test_halving_then_bisection(self):
        obj = make_quadratic(np.eye(2), np.zeros(2))
        oracle = FixedLambdaOracle(obj, lam=1.0)
        trace = ms_bisection_run(obj, np.ones(2), oracle, rho=1.5, lambda0_guess=10.0, budget=RunBudget(max_oracle_calls=1))
        accepted = trace.records[1].lam_prime
        self.assertTrue(1.0 <= accepted <= 1.5)
        self.assertEqual(trace.oracle_calls, len(oracle.queries))

    def test_audit_passes_with_adaptive_oracle(self):
        obj = small_logistic(n=60, d=8)
        reference = newton_reference(obj)
        oracle = AdaptiveNewtonOracle(obj, sigma=0.5, lazy=False, lazy_first=False)
        trace = ms_bisection_run(obj, np.zeros(8), oracle, budget=RunBudget(max_oracle_calls=40), reference_opt=reference)
        report = audit_potential(trace)
        self.assertTrue(report.checks['potential'].passed)
        self.assertTrue(report.checks['down_steps'].passed)
        self.assertTrue(all(not r.up_flag for r in trace.records))

    def test_bracket_failure(self):
        obj = make_quadratic(np.eye(2), np.zeros(2))
        with self.assertRaises(BisectionFailure) as ctx:
            ms_bisection_run(obj, np.ones(2), FixedLambdaOracle(obj, lam=1e40), budget=RunBudget(max_oracle_calls=500))
        self.assertIsNotNone(ctx.exception.trace)


class CubicOracleAccelerationTests(SimpleTestCase):

    def test_chain_ordering(self):
        """accelerated cubic steps beat plain cubic steps on the chain"""
        from baselines.methods import MethodConfig, baseline_run

        d, H, iters = 300, 10.0, 150
        obj = make_worst_case(d)
        budget = RunBudget(max_oracle_calls=iters)
        reference = np.ones(d)
        cr = baseline_run(obj, np.zeros(d), MethodConfig('CR', H=H), budget, reference)
        accel_cr = optimal_ms_run(obj, np.zeros(d), CubicNewtonOracle(obj, H / 0.5), budget=budget, reference_opt=reference)
        accel_amsn = optimal_ms_run(obj, np.zeros(d), AdaptiveNewtonOracle(obj), budget=budget, reference_opt=reference)
        self.assertLess(accel_cr.final_gap(), cr.final_gap())
        self.assertLessEqual(accel_amsn.final_gap(), accel_cr.final_gap())
