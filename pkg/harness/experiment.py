"""
Experiment execution.

run_experiment builds the objective named by the config, finds (or loads
from cache) its reference optimum, dispatches to the acceleration loops or
the baselines, writes the CSV trace and the JSON summary and optionally
audits the run. Partial traces are written before an error propagates.
"""

import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
from django.conf import settings
from django.core.cache import caches

from accel.audit import audit_potential
from accel.schemes import ms_bisection_run, optimal_ms_run
from baselines.methods import MethodConfig, baseline_run, newton_reference, tune_step_size
from dataset.libsvm import load_libsvm
from dataset.synthetic import normalize_rows, synthetic_gaussian
from harness.config import parse_data_spec
from harness.serializers import RunSummarySerializer
from harness.trace_io import SUMMARY_SCHEMA, read_trace, write_summary, write_trace_csv
from MSAccel.exceptions import (
    AuditInputError,
    ConfigError,
    InvalidInputError,
    LibSVMParseError,
    OptimizationError,
)
from objectives.functions import (
    CubicChainObjective,
    LogisticObjective,
    hessian_lipschitz_bound,
    make_logistic,
    make_quadratic,
    make_worst_case,
)
from oracles.ms_oracles import (
    AdaptiveFirstOrderOracle,
    AdaptiveNewtonOracle,
    CubicNewtonOracle,
    GradientStepOracle,
)

logger = logging.getLogger(__name__)

# H used for the cubic chain when neither --H nor --h-scale is given
WORST_CASE_H = 10.0


@dataclass
class ExperimentResult:
    trace: object
    summary: dict
    report: Optional[object] = None
    csv_path: Optional[str] = None
    json_path: Optional[str] = None


def build_objective(spec):
    if spec.kind == 'synthetic':
        return make_logistic(synthetic_gaussian(spec.n, spec.d, spec.seed))
    if spec.kind == 'worst-case':
        return make_worst_case(spec.d)
    if spec.kind == 'quadratic':
        try:
            with np.load(spec.path) as arrays:
                Q, b = arrays['Q'], arrays['b']
        except KeyError as exc:
            raise ConfigError(f'{spec.path} must hold arrays Q and b (missing {exc})') from None
        except (OSError, ValueError) as exc:
            raise ConfigError(f'cannot read {spec.path}: {exc}') from None
        return make_quadratic(Q, b)
    return make_logistic(normalize_rows(load_libsvm(spec.path)))


def resolve_H(obj, cfg):
    """Hessian-Lipschitz constant used by the cubic oracles, or None when unknown"""
    if cfg.H is not None:
        return cfg.H
    if isinstance(obj, LogisticObjective):
        scale = cfg.h_scale if cfg.h_scale is not None else getattr(settings, 'MSACCEL_H_SCALE', 0.1)
        return scale * hessian_lipschitz_bound(obj.data)
    if isinstance(obj, CubicChainObjective):
        return WORST_CASE_H if cfg.h_scale is None else cfg.h_scale * obj.hessian_lipschitz
    return None


def _reference_key(obj):
    grad_tol = getattr(settings, 'MSACCEL_REFERENCE_GRAD_TOL', 1e-13)
    max_iter = getattr(settings, 'MSACCEL_REFERENCE_MAX_ITER', 200)
    raw = f'{obj.fingerprint()}|tol={grad_tol!r}|iters={max_iter}'
    return 'reference:' + hashlib.sha256(raw.encode()).hexdigest()


def reference_optimum(obj):
    """Minimizer used for gaps; Newton solves are cached by objective content"""
    closed_form = obj.minimizer()
    if closed_form is not None:
        return np.asarray(closed_form, dtype=float)
    cache = caches['reference_optima']
    key = _reference_key(obj)
    cached = cache.get(key)
    if cached is not None and np.shape(cached) == (obj.dim,):
        logger.info(f'[Reference] cache hit {key[10:22]}')
        return np.asarray(cached, dtype=float)
    x = newton_reference(obj)
    cache.set(key, x)
    logger.info(f'[Reference] cached {key[10:22]}')
    return x


def build_oracle(obj, cfg, H):
    sigma = cfg.sigma if cfg.sigma is not None else getattr(settings, 'MSACCEL_SIGMA', 0.5)
    if cfg.oracle == 'AMSN':
        # a lazy answer would classify every passing bisection probe as valid
        return AdaptiveNewtonOracle(obj, sigma=sigma, lazy=cfg.lazy and cfg.method != 'MS')
    if cfg.oracle == 'AMSN_FO':
        return AdaptiveFirstOrderOracle(obj, sigma=sigma)
    if cfg.oracle == 'CR':
        # M >= H / sigma makes the cubic step a sigma-MS oracle
        M = cfg.M if cfg.M is not None else (None if H is None else H / sigma)
        if M is None:
            raise ConfigError('the cubic oracle needs --H or --M for this objective')
        return CubicNewtonOracle(obj, M, sigma=sigma)
    if cfg.oracle == 'GD':
        return GradientStepOracle(obj, cfg.eta, sigma=cfg.sigma)
    raise ConfigError(f'unknown oracle {cfg.oracle!r}')


def _dispatch(obj, cfg, H, x0, reference, f_star):
    budget = cfg.budget
    if cfg.method == 'OPTMS':
        return optimal_ms_run(
            obj, x0, build_oracle(obj, cfg, H), alpha=cfg.alpha, lambda0=cfg.lambda0, budget=budget,
            reference_opt=reference, damping=cfg.damping, f_star=f_star,
        )
    if cfg.method == 'MS':
        return ms_bisection_run(
            obj, x0, build_oracle(obj, cfg, H), rho=cfg.rho, lambda0_guess=cfg.lambda0, budget=budget,
            reference_opt=reference, f_star=f_star,
        )
    if cfg.method in ('GD', 'AGD') and cfg.eta is None:
        _, trace = tune_step_size(obj, x0, cfg.method, budget, reference_opt=reference, f_star=f_star)
        return trace
    if cfg.method in ('GD', 'AGD'):
        method_cfg = MethodConfig(cfg.method, eta=cfg.eta)
    elif cfg.method in ('CR', 'ACR', 'SONG'):
        method_cfg = MethodConfig(cfg.method, M=cfg.M if cfg.method != 'SONG' else None, H=H)
    elif cfg.method == 'NEWTON':
        method_cfg = MethodConfig('NEWTON')
    else:
        method_cfg = MethodConfig(cfg.method, lambda1=cfg.lambda0, sigma=cfg.sigma)
    return baseline_run(obj, x0, method_cfg, budget, reference, f_star)


def build_summary(cfg, obj, trace, H=None, report=None, error=None):
    last = trace.last
    payload = {
        'schema': SUMMARY_SCHEMA,
        'method': trace.method,
        'oracle': cfg.oracle,
        'data': cfg.data.label(),
        'config': cfg.as_dict(),
        'params': trace.params,
        'fingerprint': obj.fingerprint(),
        'sigma': trace.params.get('sigma', cfg.sigma),
        'alpha': trace.params.get('alpha'),
        'H': H,
        'status': trace.status,
        'error': None if error is None else str(error),
        'iterations': max(len(trace) - 1, 0),
        'oracle_calls': trace.oracle_calls,
        'f_star': trace.f_star,
        'final_f': None if last is None else last.f,
        'final_gap': trace.final_gap(),
        'best_gap': trace.best_gap(),
        'counters': trace.counters.as_dict(),
        'wall_ms': trace.elapsed_ms(),
        'calls': trace.calls,
        'audit': None if report is None else report.as_dict(),
    }
    return RunSummarySerializer(payload).data


def _emit(cfg, summary, trace):
    if not cfg.out:
        return None, None
    csv_path = write_trace_csv(trace, cfg.out)
    json_path = write_summary(summary, cfg.out)
    return str(csv_path), str(json_path)


def run_experiment(cfg):
    """
    Run one validated ExperimentConfig.

    Returns an ExperimentResult; the audit report (when requested) is
    attached but a failed audit does not raise, so the caller decides how
    to report it.
    """
    obj = build_objective(cfg.data)
    H = resolve_H(obj, cfg)
    reference = reference_optimum(obj)
    f_star = obj.value(reference)
    x0 = np.zeros(obj.dim)
    logger.info(f'[Experiment] {cfg.method} oracle={cfg.oracle} data={cfg.data.label()} dim={obj.dim} H={H}')

    try:
        trace = _dispatch(obj, cfg, H, x0, reference, f_star)
    except OptimizationError as exc:
        if exc.trace is not None:
            summary = build_summary(cfg, obj, exc.trace, H=H, error=exc)
            _emit(cfg, summary, exc.trace)
            logger.error(f'[Experiment] {cfg.method} failed after {len(exc.trace) - 1} iterations: {exc}')
        raise

    report = None
    if cfg.audit:
        report = audit_potential(trace, obj=obj, reference_opt=reference)
    summary = build_summary(cfg, obj, trace, H=H, report=report)
    csv_path, json_path = _emit(cfg, summary, trace)
    logger.info(
        f'[Experiment] done status={trace.status} gap={trace.final_gap():.4e} calls={trace.oracle_calls}'
        + ('' if report is None else f' audit={report.verdict}')
    )
    return ExperimentResult(trace, summary, report, csv_path, json_path)


def audit_trace(path, data=None, sigma=None):
    """
    Re-audit a written trace. With an objective spec the suboptimality
    column is recomputed against a fresh reference optimum.
    """
    trace = read_trace(path)
    obj = reference = None
    if data:
        obj = build_objective(parse_data_spec(data))
        reference = reference_optimum(obj)
    return audit_potential(trace, obj=obj, reference_opt=reference, sigma=sigma)


def _run_one(cfg):
    try:
        result = run_experiment(cfg)
    except OptimizationError as exc:
        return {'out': cfg.out, 'status': 'error', 'error': str(exc), 'final_gap': None, 'audit': None}
    return {
        'out': cfg.out,
        'status': result.trace.status,
        'error': None,
        'final_gap': result.summary['final_gap'],
        'audit': None if result.report is None else result.report.verdict,
    }


def run_benchmark(configs, jobs=1):
    """Run independent configs, one worker per config; results keep the input order"""
    outputs = [cfg.out for cfg in configs if cfg.out]
    if len(outputs) != len(set(outputs)):
        raise ConfigError('benchmark entries must write to distinct --out paths')
    if jobs <= 1:
        return [_run_one(cfg) for cfg in configs]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_one, configs))


def error_returncode(exc):
    """Process exit code for a library error: 2 config, 3 parse, 4 run failure"""
    if isinstance(exc, (LibSVMParseError, AuditInputError)):
        return 3
    if isinstance(exc, (ConfigError, InvalidInputError)):
        return 2
    return 4
