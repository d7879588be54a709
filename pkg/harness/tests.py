import csv
import json
import math
import shutil
import tempfile
from io import StringIO
from pathlib import Path

import numpy as np
from django.conf import settings
from django.core.cache import caches
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, override_settings

from dataset.synthetic import synthetic_gaussian
from harness.config import DataSpec, parse_data_spec
from harness.experiment import audit_trace, build_objective, build_oracle, reference_optimum, run_experiment
from harness.serializers import ExperimentConfigSerializer
from harness.trace_io import HEADER, read_trace
from MSAccel.exceptions import AuditInputError, ConfigError, OptimizationError
from objectives.functions import make_logistic

TEST_CACHES = {
    'default': {'BACKEND': 'django.core.cache.backends.locmem.LocMemCache'},
    'reference_optima': {
        'BACKEND': 'django.core.cache.backends.locmem.LocMemCache',
        'LOCATION': 'msaccel-tests',
    },
}


def make_config(**data):
    serializer = ExperimentConfigSerializer(data=data)
    if not serializer.is_valid():
        raise AssertionError(serializer.errors)
    return serializer.save()


class WorkspaceMixin:

    def setUp(self):
        workspace = tempfile.TemporaryDirectory()
        self.addCleanup(workspace.cleanup)
        self.dir = Path(workspace.name)
        caches['reference_optima'].clear()

    def path(self, name):
        return str(self.dir / name)

    def write_quadratic(self, Q, b, name='problem.npz'):
        path = self.dir / name
        np.savez(path, Q=np.asarray(Q, dtype=float), b=np.asarray(b, dtype=float))
        return f'quadratic:{path}'

    def run_command(self, *args, **options):
        out = StringIO()
        call_command(*args, stdout=out, stderr=StringIO(), **options)
        return out.getvalue()

    def read_rows(self, path):
        with open(path, newline='') as handle:
            lines = handle.read().splitlines()
        return lines[0], list(csv.reader(lines[1:]))

    def read_summary(self, path):
        with open(Path(path).with_suffix('.json')) as handle:
            return json.load(handle)


@override_settings(CACHES=TEST_CACHES)
class DataSpecTests(WorkspaceMixin, SimpleTestCase):

    def test_synthetic_takes_seed_from_config(self):
        spec = parse_data_spec('synthetic:n=10,d=3', seed=4)
        self.assertEqual(spec, DataSpec('synthetic', n=10, d=3, seed=4))
        self.assertEqual(parse_data_spec('synthetic:n=10,d=3,seed=1', seed=4).seed, 1)
        self.assertEqual(spec.label(), 'synthetic:n=10,d=3,seed=4')

    def test_worst_case(self):
        self.assertEqual(parse_data_spec('worst-case:d=300'), DataSpec('worst-case', d=300))

    def test_file_specs(self):
        path = self.dir / 'tiny.svm'
        path.write_text('+1 1:1\n-1 2:1\n')
        self.assertEqual(parse_data_spec(str(path)), DataSpec('libsvm', path=str(path)))
        self.assertEqual(parse_data_spec(f'libsvm:{path}').kind, 'libsvm')

    def test_malformed_specs(self):
        for text in ('', 'synthetic:n=5,d=2', 'synthetic:d=2', 'synthetic:n=4,d=x', 'worst-case:d=0',
                     'worst-case:n=3', str(self.dir / 'missing.svm')):
            with self.assertRaises(ConfigError, msg=text):
                parse_data_spec(text)


@override_settings(CACHES=TEST_CACHES)
class ExperimentConfigSerializerTests(WorkspaceMixin, SimpleTestCase):

    def test_defaults(self):
        cfg = make_config(method='OPTMS', oracle='AMSN', data='worst-case:d=4', budget_calls=3)
        self.assertEqual(cfg.damping, 'on')
        self.assertTrue(cfg.lazy)
        self.assertEqual(cfg.budget.max_oracle_calls, 3)
        self.assertEqual(cfg.as_dict()['data'], 'worst-case:d=4')

    def test_bisection_runs_non_lazy_by_default(self):
        cfg = make_config(method='MS', oracle='AMSN', data='worst-case:d=4', budget_calls=3)
        self.assertFalse(cfg.lazy)
        oracle = build_oracle(build_objective(cfg.data), cfg, H=None)
        self.assertIs(oracle.lazy, False)

        explicit = make_config(method='OPTMS', oracle='AMSN', data='worst-case:d=4', budget_calls=3, lazy='off')
        self.assertFalse(explicit.lazy)

    def test_only_project_apps_installed(self):
        self.assertEqual(
            settings.INSTALLED_APPS,
            ['rest_framework', 'objectives', 'linalg', 'oracles', 'accel', 'baselines', 'dataset', 'harness'],
        )

    def test_rejections(self):
        cases = [
            ({'method': 'OPTMS', 'data': 'worst-case:d=4', 'budget_calls': 3}, 'oracle'),
            ({'method': 'NEWTON', 'oracle': 'AMSN', 'data': 'worst-case:d=4', 'budget_calls': 3}, 'oracle'),
            ({'method': 'OPTMS', 'oracle': 'AMSN', 'data': 'worst-case:d=4', 'budget_calls': 3, 'sigma': 1.0}, 'sigma'),
            ({'method': 'OPTMS', 'oracle': 'AMSN', 'data': 'worst-case:d=4', 'budget_calls': 3, 'alpha': 1.0}, 'alpha'),
            ({'method': 'OPTMS', 'oracle': 'GD', 'data': 'worst-case:d=4', 'budget_calls': 3}, 'eta'),
            ({'method': 'OPTMS', 'oracle': 'AMSN', 'data': 'worst-case:d=4', 'budget_calls': 3, 'damping': 'maybe'}, 'damping'),
            ({'method': 'OPTMS', 'oracle': 'AMSN', 'data': 'synthetic:n=3,d=2', 'budget_calls': 3}, 'data'),
            ({'method': 'GD', 'data': 'worst-case:d=4', 'budget_calls': 3, 'audit': True}, 'audit'),
            ({'method': 'MS', 'oracle': 'AMSN', 'data': 'worst-case:d=4', 'budget_calls': 3, 'lazy': 'on'}, 'lazy'),
            ({'method': 'OPTMS', 'oracle': 'AMSN', 'data': 'worst-case:d=4'}, 'non_field_errors'),
        ]
        for data, field in cases:
            serializer = ExperimentConfigSerializer(data=data)
            self.assertFalse(serializer.is_valid(), data)
            self.assertIn(field, serializer.errors, data)


@override_settings(CACHES=TEST_CACHES)
class ReferenceCacheTests(WorkspaceMixin, SimpleTestCase):

    def test_second_lookup_hits_cache(self):
        obj = make_logistic(synthetic_gaussian(40, 4, seed=2))
        first = reference_optimum(obj)
        with self.assertLogs('harness.experiment', level='INFO') as logs:
            second = reference_optimum(obj)
        self.assertTrue(any('cache hit' in line for line in logs.output))
        np.testing.assert_array_equal(first, second)
        self.assertLess(np.linalg.norm(obj.gradient(second)), 1e-10)


@override_settings(CACHES=TEST_CACHES)
class RunExperimentCommandTests(WorkspaceMixin, SimpleTestCase):

    def test_newton_on_quadratic(self):
        data = self.write_quadratic([[3.0, 1.0], [1.0, 2.0]], [1.0, -1.0])
        out = self.path('newton.csv')
        self.run_command('run_experiment', method='NEWTON', data=data, budget_calls=1, out=out)
        summary = self.read_summary(out)
        self.assertEqual(summary['iterations'], 1)
        self.assertLessEqual(summary['final_gap'], 1e-10)
        first_line, rows = self.read_rows(out)
        self.assertEqual(first_line, '# msaccel-trace v1')
        self.assertEqual(rows[0], HEADER)
        self.assertEqual(len(rows), 3)
        self.assertEqual(rows[1][4], 'nan')

    def test_same_seed_gives_identical_numeric_columns(self):
        outputs = []
        for name in ('a.csv', 'b.csv'):
            out = self.path(name)
            self.run_command(
                'run_experiment', method='OPTMS', oracle='AMSN', data='synthetic:n=60,d=8',
                seed=3, budget_calls=15, out=out,
            )
            _, rows = self.read_rows(out)
            wall = rows[0].index('wall_ms')
            outputs.append([row[:wall] + row[wall + 1:] for row in rows])
        self.assertEqual(outputs[0], outputs[1])
        self.assertGreater(len(outputs[0]), 2)

    def test_config_errors_exit_2(self):
        bad = [
            {'method': 'OPTMS', 'oracle': 'AMSN', 'data': 'worst-case:d=4', 'budget_calls': 3, 'sigma': 1.5},
            {'method': 'OPTMS', 'data': 'worst-case:d=4', 'budget_calls': 3},
            {'method': 'CR', 'data': 'synthetic:n=5,d=2', 'budget_calls': 3},
        ]
        for options in bad:
            with self.assertRaises(CommandError) as ctx:
                self.run_command('run_experiment', **options)
            self.assertEqual(ctx.exception.returncode, 2, options)

    def test_missing_cubic_constant_exits_2(self):
        data = self.write_quadratic(np.eye(2), [1.0, 1.0])
        with self.assertRaises(CommandError) as ctx:
            self.run_command('run_experiment', method='CR', data=data, budget_calls=3)
        self.assertEqual(ctx.exception.returncode, 2)

    def test_parse_error_exits_3(self):
        path = self.dir / 'broken.svm'
        path.write_text('+1 1:1\n+1 2:1 1:0.5\n')
        with self.assertRaises(CommandError) as ctx:
            self.run_command('run_experiment', method='NEWTON', data=str(path), budget_calls=2)
        self.assertEqual(ctx.exception.returncode, 3)
        self.assertIn('line 2', str(ctx.exception))

    def test_divergence_exits_4_and_flushes_partial_trace(self):
        out = self.path('diverged.csv')
        with self.assertRaises(CommandError) as ctx:
            self.run_command('run_experiment', method='GD', eta=1e10, data='worst-case:d=5', budget_calls=50, out=out)
        self.assertEqual(ctx.exception.returncode, 4)
        _, rows = self.read_rows(out)
        self.assertGreater(len(rows), 2)
        summary = self.read_summary(out)
        self.assertEqual(summary['status'], 'error')
        self.assertIsNotNone(summary['error'])

    def test_budget_and_counters_in_summary(self):
        out = self.path('fo.csv')
        self.run_command(
            'run_experiment', method='OPTMS', oracle='AMSN_FO', data='worst-case:d=20', budget_calls=10, out=out,
        )
        summary = self.read_summary(out)
        self.assertEqual(summary['oracle_calls'], 10)
        self.assertEqual(len(summary['calls']), 10)
        self.assertEqual(summary['counters']['hvps'], sum(call['hvps'] for call in summary['calls']))
        self.assertEqual(summary['counters']['hessian_evals'], 0)
        self.assertEqual(summary['alpha'], 2.0)
        self.assertEqual(summary['sigma'], 0.5)


@override_settings(CACHES=TEST_CACHES)
class AuditTests(WorkspaceMixin, SimpleTestCase):

    def gd_run(self, name='gd.csv'):
        data = self.write_quadratic(np.eye(2), [1.0, 2.0])
        out = self.path(name)
        # on Q = I the gradient step with eta = 0.4 is a 0.4-MS oracle
        self.run_command(
            'run_experiment', method='OPTMS', oracle='GD', eta=0.4, sigma=0.5, data=data,
            budget_calls=20, out=out, audit=True,
        )
        return data, out

    def test_gradient_oracle_run_passes(self):
        data, out = self.gd_run()
        summary = self.read_summary(out)
        self.assertEqual(summary['audit']['verdict'], 'pass')
        self.assertEqual(summary['audit']['checks']['ms_residual']['evaluated'], 0)
        text = self.run_command('audit_trace', out, data=data)
        self.assertIn('Audit passed', text)

    def test_corrupted_A_column_fails(self):
        _, out = self.gd_run()
        tampered = self.dir / 'tampered.csv'
        with open(out, newline='') as handle:
            lines = handle.read().splitlines()
        row = lines[4].split(',')
        self.assertEqual(row[0], '2')
        row[3] = format(float(row[3]) * 1e6, '.17g')
        lines[4] = ','.join(row)
        tampered.write_text('\n'.join(lines) + '\n')
        shutil.copy(Path(out).with_suffix('.json'), tampered.with_suffix('.json'))

        report = audit_trace(tampered)
        self.assertFalse(report.checks['potential'].passed)
        self.assertIn('potential', report.failed())
        with self.assertRaises(CommandError) as ctx:
            self.run_command('audit_trace', str(tampered))
        self.assertEqual(ctx.exception.returncode, 5)

    def test_schema_mismatch(self):
        bogus = self.dir / 'bogus.csv'
        bogus.write_text('t,f\n0,1\n')
        with self.assertRaises(AuditInputError):
            read_trace(bogus)
        with self.assertRaises(CommandError) as ctx:
            self.run_command('audit_trace', str(bogus))
        self.assertEqual(ctx.exception.returncode, 3)

    def test_first_order_oracle_on_chain(self):
        out = self.path('chain.csv')
        self.run_command(
            'run_experiment', method='OPTMS', oracle='AMSN_FO', data='worst-case:d=300',
            budget_calls=80, out=out, audit=True,
        )
        summary = self.read_summary(out)
        self.assertEqual(summary['audit']['verdict'], 'pass')
        self.assertEqual(summary['oracle_calls'], 80)
        for call in summary['calls']:
            self.assertLessEqual(call['ms_residual'], 0.5 * call['step_norm'] + 1e-9 * (1 + call['step_norm']))


@override_settings(CACHES=TEST_CACHES)
class SyntheticAcceptanceTests(WorkspaceMixin, SimpleTestCase):
    """Adaptive Newton acceleration on synthetic logistic, n=500, d=200, seed=1, 60 calls"""

    def run_synthetic(self, **options):
        return run_experiment(make_config(
            method='OPTMS', oracle='AMSN', data='synthetic:n=500,d=200,seed=1', budget_calls=60, **options,
        ))

    def test_certificates(self):
        result = self.run_synthetic(audit=True)
        trace = result.trace
        self.assertEqual(trace.oracle_calls, 60)
        for call in trace.calls:
            step = call['step_norm']
            self.assertLessEqual(call['ms_residual'], 0.5 * step + 1e-9 * (1 + step))
        checks = result.report.checks
        for name in ('potential', 'growth', 'down_steps', 'ms_residual', 'solve_count'):
            self.assertTrue(checks[name].passed, name)
        self.assertGreater(checks['potential'].evaluated, 0)
        self.assertGreater(checks['solve_count'].evaluated, 0)
        for rec in trace.records[1:]:
            self.assertTrue(math.isfinite(rec.E) and math.isfinite(rec.lam) and math.isfinite(rec.lam_prime))

    def test_damping_matters(self):
        damped = self.run_synthetic().trace.final_gap()
        try:
            undamped = self.run_synthetic(damping='off').trace.final_gap()
        except OptimizationError:
            # the undamped ablation is allowed to blow up outright
            undamped = math.inf
        self.assertLessEqual(10.0 * damped, undamped)


@override_settings(CACHES=TEST_CACHES)
class RunBenchmarkCommandTests(WorkspaceMixin, SimpleTestCase):

    def test_runs_every_entry(self):
        data = self.write_quadratic([[2.0, 0.0], [0.0, 1.0]], [1.0, 1.0])
        matrix = self.dir / 'matrix.yaml'
        matrix.write_text(
            'runs:\n'
            f'  - {{method: NEWTON, data: "{data}", budget_calls: 1, out: newton.csv}}\n'
            '  - {method: OPTMS, oracle: CR, data: "worst-case:d=10", budget-calls: 5, out: cr.csv, H: 34, audit: true}\n'
            '  - {method: AGD, eta: 0.5, data: "worst-case:d=10", budget_calls: 5, out: agd.csv}\n'
        )
        text = self.run_command('run_benchmark', str(matrix), jobs=2, out_dir=str(self.dir))
        for name in ('newton.csv', 'cr.csv', 'agd.csv'):
            self.assertTrue((self.dir / name).is_file(), name)
            self.assertTrue((self.dir / name).with_suffix('.json').is_file(), name)
        self.assertIn('audit=pass', text)
        self.assertIn('Benchmark finished: 3 runs', text)

    def test_invalid_entry(self):
        matrix = self.dir / 'matrix.yaml'
        matrix.write_text('- {method: OPTMS, data: "worst-case:d=3", budget_calls: 2}\n')
        with self.assertRaises(CommandError) as ctx:
            self.run_command('run_benchmark', str(matrix))
        self.assertEqual(ctx.exception.returncode, 2)
        self.assertIn('entry 0', str(ctx.exception))
