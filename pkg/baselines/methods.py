"""
Baseline methods: cubic regularization (plain and accelerated), Newton,
gradient descent (plain and accelerated), the fixed-schedule MS variant and
the iterate-the-oracle schemes. Also hosts the reference Newton solver used
for suboptimality gaps.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from django.conf import settings

from accel.trace import Trace
from linalg.solvers import reg_newton_step
from MSAccel.exceptions import ConfigError, DivergenceError, OptimizationError
from oracles.ms_oracles import OracleCounters, OracleResult, amsn, amsn_fo, cr_oracle, gd_oracle

logger = logging.getLogger(__name__)

BASELINE_METHODS = ('CR', 'ACR', 'NEWTON', 'GD', 'AGD', 'SONG', 'ITERATE_AMSN', 'ITERATE_AMSN_FO')
ARMIJO_C = 1e-4
DISTANCE_NEWTON_STEPS = 20


@dataclass
class MethodConfig:
    method: str
    eta: Optional[float] = None
    M: Optional[float] = None
    H: Optional[float] = None
    R: Optional[float] = None
    lambda1: Optional[float] = None
    sigma: Optional[float] = None

    def __post_init__(self):
        if self.method not in BASELINE_METHODS:
            raise ConfigError(f'unknown baseline {self.method!r}')
        if self.method in ('GD', 'AGD') and not (self.eta and self.eta > 0):
            raise ConfigError(f'{self.method} needs a positive step size eta')
        if self.method in ('CR', 'ACR', 'SONG') and self.cubic_M is None:
            raise ConfigError(f'{self.method} needs M or H')
        if self.cubic_M is not None and not self.cubic_M > 0:
            raise ConfigError('M must be positive')

    @property
    def cubic_M(self):
        """M for the cubic oracle, 2H when only H is known"""
        if self.M is not None:
            return self.M
        if self.H is not None:
            return 2.0 * self.H
        return None

    @property
    def hessian_lipschitz(self):
        return self.H if self.H is not None else (None if self.M is None else self.M / 2.0)


# reference optimum

def newton_reference(obj, x0=None, grad_tol=None, max_iter=None):
    """
    High-accuracy minimizer: the closed form when the objective has one,
    otherwise Newton's method with Armijo backtracking.
    """
    closed_form = obj.minimizer()
    if closed_form is not None:
        return np.asarray(closed_form, dtype=float)
    grad_tol = getattr(settings, 'MSACCEL_REFERENCE_GRAD_TOL', 1e-13) if grad_tol is None else grad_tol
    max_iter = getattr(settings, 'MSACCEL_REFERENCE_MAX_ITER', 200) if max_iter is None else max_iter
    x, grad_norm = _damped_newton(obj, np.zeros(obj.dim) if x0 is None else x0, grad_tol, max_iter)
    if grad_norm > grad_tol:
        logger.warning(f'[Reference] stopped at gradient norm {grad_norm:.3e} (target {grad_tol:.1e})')
    else:
        logger.info(f'[Reference] gradient norm {grad_norm:.3e}')
    return x


def _damped_newton(obj, x0, grad_tol, max_iter):
    floor = getattr(settings, 'MSACCEL_LAMBDA_NEWTON', 1e-10)
    x = np.asarray(x0, dtype=float).copy()
    f = obj.value(x)
    g = obj.gradient(x)
    for _ in range(max_iter):
        grad_norm = float(np.linalg.norm(g))
        if grad_norm <= grad_tol:
            break
        step = reg_newton_step(obj.hessian(x), g, floor)
        slope = float(g @ step)

        # near the optimum f stops resolving progress; a full step that
        # halves the gradient is accepted without the Armijo test
        candidate = x + step
        g_candidate = obj.gradient(candidate)
        if np.linalg.norm(g_candidate) <= 0.5 * grad_norm:
            x, f, g = candidate, obj.value(candidate), g_candidate
            continue

        t = 1.0
        while t > 1e-12:
            candidate = x + t * step
            f_candidate = obj.value(candidate)
            if f_candidate <= f + ARMIJO_C * t * slope:
                break
            t *= 0.5
        else:
            break
        x, f = candidate, f_candidate
        g = obj.gradient(x)
    return x, float(np.linalg.norm(g))


def estimate_distance(obj, x0, steps=DISTANCE_NEWTON_STEPS):
    """Displacement of a short Newton run, a stand-in for ||x0 - x*||"""
    x, _ = _damped_newton(obj, x0, 0.0, steps)
    return float(np.linalg.norm(x - np.asarray(x0)))


# shared loop helpers

def _start(obj, x0, method, reference_opt, f_star, params):
    if reference_opt is not None and f_star is None:
        f_star = obj.value(reference_opt)
    trace = Trace(method, params=params, f_star=f_star, x_star=reference_opt)
    x0 = np.asarray(x0, dtype=float).copy()
    trace.record(0, x0, obj.value(x0))
    return trace, x0


def _require_budget(budget):
    if budget is None or not budget.bounded:
        raise ConfigError('baselines stop only on a budget: set max_oracle_calls, target_gap or max_seconds')


def _guarded(run):
    """Attach the iteration and the partial trace to errors raised inside a loop"""

    def wrapper(obj, x0, *args, **kwargs):
        progress = {}
        try:
            return run(obj, x0, *args, progress=progress, **kwargs)
        except OptimizationError as exc:
            trace = progress.get('trace')
            if trace is not None:
                trace.finish('error')
            raise exc.with_context(iteration=len(trace) - 1 if trace else None, trace=trace)

    wrapper.__name__ = run.__name__
    wrapper.__doc__ = run.__doc__
    return wrapper


def song_schedule(t, H, R):
    """A_t = (t/3)^{7/2} / (2 H R)"""
    return (t / 3.0) ** 3.5 / (2.0 * H * R)


# baselines

@_guarded
def baseline_run(obj, x0, cfg, budget=None, reference_opt=None, f_star=None, progress=None):
    """Run the baseline selected by cfg.method and return its Trace"""
    _require_budget(budget)
    params = {k: v for k, v in vars(cfg).items() if v is not None}
    if cfg.method in ('ITERATE_AMSN', 'ITERATE_AMSN_FO'):
        return _iterate(
            obj, x0, 'AMSN' if cfg.method == 'ITERATE_AMSN' else 'AMSN_FO',
            lambda1=cfg.lambda1, sigma=cfg.sigma, budget=budget, reference_opt=reference_opt,
            f_star=f_star, progress=progress,
        )
    trace, x = _start(obj, x0, cfg.method, reference_opt, f_star, params)
    progress['trace'] = trace
    logger.info(f'[Baseline] start {cfg.method} dim={obj.dim} params={params}')
    step = {
        'CR': _run_cr,
        'NEWTON': _run_newton,
        'GD': _run_gd,
        'AGD': _run_agd,
        'ACR': _run_acr,
        'SONG': _run_song,
    }[cfg.method]
    step(obj, x, cfg, budget, trace)
    trace.finish()
    logger.info(f'[Baseline] done {cfg.method} t={len(trace) - 1} status={trace.status} gap={trace.final_gap():.4e}')
    return trace


def _run_cr(obj, x, cfg, budget, trace):
    t = 0
    while not trace.exhausted(budget):
        result = cr_oracle(obj, x, cfg.cubic_M)
        trace.log_call(result, t)
        x = result.x
        t += 1
        trace.record(t, x, obj.value(x), lam=result.lam)
        if result.stationary:
            trace.finish('stationary')
            break


def _run_newton(obj, x, cfg, budget, trace):
    floor = getattr(settings, 'MSACCEL_LAMBDA_NEWTON', 1e-10)
    t = 0
    while not trace.exhausted(budget):
        g = obj.gradient(x)
        if not np.any(g):
            trace.finish('stationary')
            break
        step = reg_newton_step(obj.hessian(x), g, floor)
        result = OracleResult(
            x=x + step, lam=floor, ms_residual=math.nan, step_norm=float(np.linalg.norm(step)),
            counters=OracleCounters(hessian_evals=1, linear_solves=1, gradient_evals=1), kind='NEWTON',
        )
        trace.log_call(result, t)
        x = result.x
        t += 1
        trace.record(t, x, obj.value(x), lam=floor)


def _run_gd(obj, x, cfg, budget, trace):
    t = 0
    while not trace.exhausted(budget):
        result = gd_oracle(obj, x, cfg.eta)
        trace.log_call(result, t)
        if result.stationary:
            trace.finish('stationary')
            break
        x = result.x
        t += 1
        trace.record(t, x, obj.value(x))


def _run_agd(obj, x, cfg, budget, trace):
    """
    Nesterov's method:
        x_{k+1} = y_k - eta grad f(y_k)
        t_{k+1} = (1 + sqrt(1 + 4 t_k^2)) / 2
        y_{k+1} = x_{k+1} + ((t_k - 1) / t_{k+1}) (x_{k+1} - x_k)
    """
    y = x.copy()
    momentum = 1.0
    t = 0
    while not trace.exhausted(budget):
        result = gd_oracle(obj, y, cfg.eta)
        trace.log_call(result, t)
        if result.stationary:
            trace.finish('stationary')
            break
        x_next = result.x
        momentum_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * momentum ** 2))
        y = x_next + ((momentum - 1.0) / momentum_next) * (x_next - x)
        x, momentum = x_next, momentum_next
        t += 1
        trace.record(t, x, obj.value(x))


def _run_acr(obj, x0, cfg, budget, trace):
    """
    Accelerated cubic regularization with M = 2H and N = 12H.

        x_1 = T_M(x_0),  psi_1(x) = f(x_1) + (N/6)||x - x_0||^3
        v_k = argmin psi_k = x_0 - sqrt(2 / (N ||s_k||)) s_k
        y_k = (k / (k + 3)) x_k + (3 / (k + 3)) v_k
        x_{k+1} = T_M(y_k)
        s_{k+1} = s_k + ((k + 1)(k + 2) / 2) grad f(x_{k+1})
    """
    H = cfg.hessian_lipschitz
    M = 2.0 * H
    N = 12.0 * H
    s = np.zeros_like(x0)

    result = cr_oracle(obj, x0, M)
    trace.log_call(result, 0)
    x = result.x
    trace.record(1, x, obj.value(x), lam=result.lam)
    k = 1
    while not result.stationary and not trace.exhausted(budget):
        norm_s = float(np.linalg.norm(s))
        v = x0 - math.sqrt(2.0 / (N * norm_s)) * s if norm_s > 0 else x0.copy()
        y = (k / (k + 3.0)) * x + (3.0 / (k + 3.0)) * v
        result = cr_oracle(obj, y, M)
        trace.log_call(result, k)
        x = result.x
        s = s + 0.5 * (k + 1) * (k + 2) * result.grad_x
        k += 1
        trace.record(k, x, obj.value(x), lam=result.lam)
    if result.stationary:
        trace.finish('stationary')


def _run_song(obj, x0, cfg, budget, trace):
    """
    MS update driven by a fixed schedule A_t = (t/3)^{7/2} / (2HR),
    lambda'_{t+1} = A_{t+1} / (A_{t+1} - A_t)^2, with no validity checks.
    """
    H = cfg.hessian_lipschitz
    R = cfg.R if cfg.R is not None else estimate_distance(obj, x0)
    if not R > 0:
        raise ConfigError(f'distance estimate must be positive, got {R}')
    trace.params['R'] = R
    M = 2.0 * H
    x, v = x0.copy(), x0.copy()
    A = 0.0
    t = 0
    trace.records[0].A = 0.0
    trace.records[0].E = trace.records[0].gap
    trace.records[0].D = trace.distance_term(v)
    while not trace.exhausted(budget):
        A_next = song_schedule(t + 1, H, R)
        a = A_next - A
        lam_prime = A_next / a ** 2
        y = (A / A_next) * x + (a / A_next) * v
        result = cr_oracle(obj, y, M)
        result.lambda_query = lam_prime
        trace.log_call(result, t)
        v = v - a * result.grad_x
        x = result.x
        t += 1
        trace.record(
            t, x, obj.value(x), A=A_next, A_prime=A_next, lam=result.lam, lam_prime=lam_prime,
            up_flag=result.lam > lam_prime, D=trace.distance_term(v),
            N=0.5 * float(np.sum((result.x - y) ** 2)),
        )
        A = A_next
        if result.stationary:
            trace.finish('stationary')
            break


def _iterate(obj, x0, which, lambda1=None, sigma=None, budget=None, reference_opt=None,
             f_star=None, progress=None):
    """
    x_{t+1}, lambda_{t+1} = oracle(x_t; lambda_t / 2).

    aMSN runs non-lazy, aMSN-fo lazy.
    """
    if which not in ('AMSN', 'AMSN_FO'):
        raise ConfigError(f'iterate scheme needs AMSN or AMSN_FO, got {which!r}')
    _require_budget(budget)
    lam = getattr(settings, 'MSACCEL_LAMBDA0', 0.1) if lambda1 is None else lambda1
    sigma = getattr(settings, 'MSACCEL_SIGMA', 0.5) if sigma is None else sigma
    if not lam > 0:
        raise ConfigError(f'initial lambda must be positive, got {lam}')
    method = f'ITERATE_{which}'
    trace, x = _start(obj, x0, method, reference_opt, f_star, {'lambda1': lam, 'sigma': sigma, 'oracle': which})
    progress['trace'] = trace
    logger.info(f'[Iterate] start {which} dim={obj.dim} lambda1={lam} sigma={sigma}')
    t = 0
    while not trace.exhausted(budget):
        query = lam / 2.0
        if which == 'AMSN':
            result = amsn(obj, x, query, sigma, lazy=False)
        else:
            result = amsn_fo(obj, x, query, sigma)
        trace.log_call(result, t)
        if result.stationary:
            trace.finish('stationary')
            break
        x, lam = result.x, result.lam
        t += 1
        trace.record(t, x, obj.value(x), lam=lam, lam_prime=query)
    trace.finish()
    logger.info(f'[Iterate] done {which} t={t} status={trace.status} gap={trace.final_gap():.4e}')
    return trace


iterate_oracle_run = _guarded(_iterate)


def tune_step_size(obj, x0, method, budget, grid=None, reference_opt=None, f_star=None):
    """
    Best-of step-size selection for GD or AGD.

    Runs every eta in the grid under the same budget and keeps the one with
    the lowest best-so-far objective. When an edge of the grid wins, the grid
    is extended once in that direction; an edge win after that is accepted
    with a warning.

    Returns:
        (eta, trace) of the winning run
    """
    if method not in ('GD', 'AGD'):
        raise ConfigError(f'step-size tuning applies to GD and AGD, got {method!r}')
    grid = sorted(getattr(settings, 'MSACCEL_STEP_GRID', [3, 10, 30, 100, 300, 1000, 3000]) if grid is None else grid)
    if not grid:
        raise ConfigError('empty step-size grid')
    if reference_opt is not None and f_star is None:
        f_star = obj.value(reference_opt)

    runs = {}

    def evaluate(eta):
        try:
            runs[eta] = baseline_run(obj, x0, MethodConfig(method, eta=eta), budget, reference_opt, f_star)
        except DivergenceError as exc:
            logger.info(f'[Tune] {method} eta={eta} diverged: {exc}')
            runs[eta] = None

    def score(eta):
        trace = runs[eta]
        return math.inf if trace is None else trace.last.best_f

    for eta in grid:
        evaluate(eta)
    best = min(grid, key=score)
    if len(grid) > 1 and best in (grid[0], grid[-1]):
        if best == grid[0]:
            extra = grid[0] * grid[0] / grid[1]
            grid = [extra] + grid
        else:
            extra = grid[-1] * grid[-1] / grid[-2]
            grid = grid + [extra]
        evaluate(extra)
        best = min(grid, key=score)
        if best in (grid[0], grid[-1]):
            logger.warning(f'[Tune] {method} best step size {best} is still on the edge of the extended grid')
    if runs[best] is None:
        raise DivergenceError(f'{method} diverged for every step size in {grid}')
    logger.info(f'[Tune] {method} eta={best} best_f={score(best):.10e}')
    return best, runs[best]
