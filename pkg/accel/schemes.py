"""
Outer acceleration loops.

optimal_ms_run adapts lambda' multiplicatively and damps momentum when the
guess undershoots; ms_bisection_run searches lambda' per iteration until the
oracle's lambda falls in [lambda'/rho, lambda'].
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from django.conf import settings

from accel.trace import Trace
from MSAccel.exceptions import BisectionFailure, ConfigError, OptimizationError

logger = logging.getLogger(__name__)

DAMPING_MODES = ('on', 'off', 'argmin')
BISECTION_PROBE_CAP = 200


def a_prime(lam_prime, A):
    """Positive root of lam_prime * a**2 - a - A = 0"""
    return (1.0 + math.sqrt(1.0 + 4.0 * lam_prime * A)) / (2.0 * lam_prime)


@dataclass
class StepSummary:
    a: float
    gamma: float
    lam: float
    lam_prime: float
    up_flag: bool


@dataclass
class AccelState:
    t: int
    A: float
    x: np.ndarray
    v: np.ndarray
    lambda_next_guess: float
    last: Optional[StepSummary] = None
    f_x: float = math.nan
    history: list = field(default_factory=list, repr=False)

    def extrapolate(self, lam_prime):
        """(a', A', y) for a given guess"""
        a = a_prime(lam_prime, self.A)
        A_next = self.A + a
        y = (self.A / A_next) * self.x + (a / A_next) * self.v
        return a, A_next, y


def _gradient_at(obj, result, trace):
    if result.grad_x is not None:
        return result.grad_x
    trace.charge_gradient()
    return obj.gradient(result.x)


def _run_params(trace, **params):
    trace.params.update({k: v for k, v in params.items() if v is not None})


def optimal_ms_run(obj, x0, oracle, alpha=None, lambda0=None, budget=None, reference_opt=None,
                   damping='on', f_star=None, method='OPTMS'):
    """
    Optimal MS acceleration.

    Args:
        obj: objective
        x0: starting point
        oracle: callable (y, lam_prime, first) -> OracleResult
        alpha: multiplicative adjustment for lambda', > 1
        lambda0: initial regularization guess
        budget: RunBudget
        reference_opt: minimizer used for gaps and the potential terms
        damping: 'on' (convex combination), 'argmin' or 'off' (ablation)

    Returns:
        Trace with one record per outer iteration, record 0 being x0
    """
    alpha = getattr(settings, 'MSACCEL_ALPHA', 2.0) if alpha is None else alpha
    lambda0 = getattr(settings, 'MSACCEL_LAMBDA0', 0.1) if lambda0 is None else lambda0
    if not alpha > 1:
        raise ConfigError(f'alpha must exceed 1, got {alpha}')
    if not lambda0 > 0:
        raise ConfigError(f'initial lambda must be positive, got {lambda0}')
    if damping not in DAMPING_MODES:
        raise ConfigError(f'damping must be one of {DAMPING_MODES}, got {damping!r}')

    trace = _new_trace(obj, method, reference_opt, f_star)
    _run_params(trace, alpha=alpha, lambda0=lambda0, damping=damping, sigma=oracle.sigma, oracle=oracle.kind)
    x0 = np.asarray(x0, dtype=float)
    state = AccelState(t=0, A=0.0, x=x0.copy(), v=x0.copy(), lambda_next_guess=math.nan, f_x=obj.value(x0))
    trace.record(0, state.x, state.f_x, A=0.0, D=trace.distance_term(state.v))
    logger.info(f'[OptMS] start dim={obj.dim} oracle={oracle.kind} alpha={alpha} lambda0={lambda0} damping={damping}')

    try:
        pending = oracle(x0, lambda0, first=True)
        trace.log_call(pending, 0)
        state.lambda_next_guess = pending.lam

        # the first answer is already paid for, so iteration 0 always runs
        while state.t == 0 or not trace.exhausted(budget):
            t = state.t
            lam_prime = state.lambda_next_guess
            a_hat, A_hat, y = state.extrapolate(lam_prime)
            if t > 0:
                pending = oracle(y, lam_prime)
                trace.log_call(pending, t)
            result = pending
            lam = result.lam

            if lam <= lam_prime or damping == 'off':
                up = lam > lam_prime
                gamma = 1.0
                a = a_hat
                A_next = A_hat
                x_next = result.x
                f_next = None
            else:
                up = True
                gamma = lam_prime / lam
                a = gamma * a_hat
                A_next = state.A + a
                if damping == 'argmin':
                    f_tilde = obj.value(result.x)
                    if f_tilde <= state.f_x:
                        x_next, f_next = result.x, f_tilde
                    else:
                        x_next, f_next = state.x, state.f_x
                else:
                    x_next = ((1.0 - gamma) * state.A / A_next) * state.x + (gamma * A_hat / A_next) * result.x
                    f_next = None

            grad_tilde = _gradient_at(obj, result, trace)
            state.v = state.v - a * grad_tilde
            state.x = x_next
            state.A = A_next
            state.f_x = obj.value(state.x) if f_next is None else f_next
            state.lambda_next_guess = alpha * lam_prime if up else lam_prime / alpha
            state.last = StepSummary(a=a, gamma=gamma, lam=lam, lam_prime=lam_prime, up_flag=up)
            state.t = t + 1

            trace.record(
                state.t, state.x, state.f_x,
                A=state.A, A_prime=A_hat, lam=lam, lam_prime=lam_prime, up_flag=up,
                D=trace.distance_term(state.v),
                N=0.5 * float(np.sum((result.x - y) ** 2)),
            )
            logger.debug(
                f'[OptMS] t={state.t} f={state.f_x:.10e} lambda={lam:.3e} lambda_prime={lam_prime:.3e} '
                f'{"up" if up else "down"} A={state.A:.4e}'
            )
            if result.stationary:
                trace.finish('stationary')
                break
    except OptimizationError as exc:
        trace.finish('error')
        raise exc.with_context(iteration=state.t, trace=trace)

    trace.finish()
    logger.info(f'[OptMS] done t={state.t} status={trace.status} gap={trace.final_gap():.4e} calls={trace.oracle_calls}')
    return trace


def _classify(lam, lam_prime, rho):
    if lam > lam_prime:
        return 'low'
    if lam < lam_prime / rho:
        return 'high'
    return 'valid'


def ms_bisection_run(obj, x0, oracle, rho=None, lambda0_guess=None, budget=None, reference_opt=None,
                     f_star=None, method='MS'):
    """
    Classical MS acceleration with a warm-started bracketing search over lambda'.

    A probe lambda' is valid when the oracle answers with lambda in
    [lambda'/rho, lambda'], high when lambda < lambda'/rho and low when
    lambda > lambda'. The search doubles or halves from the warm start until
    it has a bracket, then bisects on a log scale. Every probe is charged.
    """
    rho = getattr(settings, 'MSACCEL_RHO', 4.0) if rho is None else rho
    lambda0_guess = getattr(settings, 'MSACCEL_LAMBDA0', 0.1) if lambda0_guess is None else lambda0_guess
    bracket_min = getattr(settings, 'MSACCEL_BRACKET_MIN', 1e-30)
    bracket_max = getattr(settings, 'MSACCEL_BRACKET_MAX', 1e30)
    if not rho > 1:
        raise ConfigError(f'rho must exceed 1, got {rho}')
    if not lambda0_guess > 0:
        raise ConfigError(f'initial lambda must be positive, got {lambda0_guess}')

    trace = _new_trace(obj, method, reference_opt, f_star)
    _run_params(trace, rho=rho, lambda0=lambda0_guess, sigma=oracle.sigma, oracle=oracle.kind)
    x0 = np.asarray(x0, dtype=float)
    state = AccelState(t=0, A=0.0, x=x0.copy(), v=x0.copy(), lambda_next_guess=lambda0_guess, f_x=obj.value(x0))
    trace.record(0, state.x, state.f_x, A=0.0, D=trace.distance_term(state.v))
    logger.info(f'[MSBisect] start dim={obj.dim} oracle={oracle.kind} rho={rho} lambda0={lambda0_guess}')

    def probe(lam_prime):
        if not bracket_min <= lam_prime <= bracket_max:
            raise BisectionFailure(
                f'bracket left [{bracket_min:.0e}, {bracket_max:.0e}] at lambda_prime={lam_prime:.3e}'
            )
        a_hat, A_hat, y = state.extrapolate(lam_prime)
        result = oracle(y, lam_prime, first=state.t == 0)
        trace.log_call(result, state.t)
        return result, a_hat, A_hat, y, _classify(result.lam, lam_prime, rho)

    try:
        while not trace.exhausted(budget):
            guess = state.lambda_next_guess
            probes = 1
            lam_prime = guess
            outcome = probe(lam_prime)
            verdict = outcome[-1]
            lo = hi = None
            if verdict == 'low':
                lo = lam_prime
                while verdict == 'low':
                    lam_prime *= 2.0
                    outcome, probes = probe(lam_prime), probes + 1
                    verdict = outcome[-1]
                    if verdict == 'low':
                        lo = lam_prime
                hi = lam_prime
            elif verdict == 'high':
                hi = lam_prime
                while verdict == 'high':
                    lam_prime /= 2.0
                    outcome, probes = probe(lam_prime), probes + 1
                    verdict = outcome[-1]
                    if verdict == 'high':
                        hi = lam_prime
                lo = lam_prime
            while verdict != 'valid':
                if probes >= BISECTION_PROBE_CAP:
                    raise BisectionFailure(f'no valid lambda_prime after {probes} probes')
                lam_prime = math.sqrt(lo * hi)
                outcome, probes = probe(lam_prime), probes + 1
                verdict = outcome[-1]
                if verdict == 'low':
                    lo = lam_prime
                elif verdict == 'high':
                    hi = lam_prime

            result, a_hat, A_hat, y, _ = outcome
            grad_tilde = _gradient_at(obj, result, trace)
            state.v = state.v - a_hat * grad_tilde
            state.x = result.x
            state.A = A_hat
            state.f_x = obj.value(state.x)
            state.last = StepSummary(a=a_hat, gamma=1.0, lam=result.lam, lam_prime=lam_prime, up_flag=False)
            state.lambda_next_guess = 2.0 * guess if result.lam > guess else 0.5 * guess
            state.t += 1
            trace.record(
                state.t, state.x, state.f_x,
                A=state.A, A_prime=A_hat, lam=result.lam, lam_prime=lam_prime, up_flag=False,
                D=trace.distance_term(state.v),
                N=0.5 * float(np.sum((result.x - y) ** 2)),
            )
            logger.debug(f'[MSBisect] t={state.t} f={state.f_x:.10e} lambda_prime={lam_prime:.3e} probes={probes}')
            if result.stationary:
                trace.finish('stationary')
                break
    except OptimizationError as exc:
        trace.finish('error')
        raise exc.with_context(iteration=state.t, trace=trace)

    trace.finish()
    logger.info(f'[MSBisect] done t={state.t} status={trace.status} gap={trace.final_gap():.4e} calls={trace.oracle_calls}')
    return trace


def _new_trace(obj, method, reference_opt, f_star):
    if reference_opt is not None and f_star is None:
        f_star = obj.value(reference_opt)
    return Trace(method, f_star=f_star, x_star=reference_opt)
