"""
MS oracles: given a query point y and a regularization guess lambda',
return a point x and a regularization lambda that satisfy

    || x - (y - grad f(x) / lambda) || <= sigma * || x - y ||

Each oracle call is a pure function of (objective, query); its cost is
reported in the returned OracleCounters rather than in shared state.
"""

import logging
import math
from dataclasses import dataclass, field, fields
from typing import NamedTuple, Optional

import numpy as np
from django.conf import settings

from linalg.solvers import conj_res, reg_newton_step
from MSAccel.exceptions import InvalidInputError, NonConvergenceError

logger = logging.getLogger(__name__)

CR_BISECTION_CAP = 200


def _setting(name, default):
    return getattr(settings, name, default)


@dataclass
class OracleCounters:
    hessian_evals: int = 0
    linear_solves: int = 0
    hvps: int = 0
    gradient_evals: int = 0

    def __add__(self, other):
        return OracleCounters(**{f.name: getattr(self, f.name) + getattr(other, f.name) for f in fields(self)})

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class OracleResult:
    """
    Output of one oracle call.

    ``ms_residual`` is nan when the oracle never evaluated the gradient at x
    (the plain gradient step). ``grad_x`` is handed to the caller so the
    momentum update does not pay for it twice.
    """

    x: np.ndarray
    lam: float
    ms_residual: float
    step_norm: float
    counters: OracleCounters = field(default_factory=OracleCounters)
    kind: str = ''
    lambda_query: float = math.nan
    floor_hit: bool = False
    stationary: bool = False
    grad_x: Optional[np.ndarray] = field(default=None, repr=False)

    def satisfies_ms(self, sigma, slack=1e-9):
        if not math.isfinite(self.ms_residual):
            return True
        return self.ms_residual <= sigma * self.step_norm + slack * (1.0 + self.step_norm)

    def log_entry(self):
        return {
            'kind': self.kind,
            'lambda_query': self.lambda_query,
            'lam': self.lam,
            'ms_residual': self.ms_residual,
            'step_norm': self.step_norm,
            'floor_hit': self.floor_hit,
            'stationary': self.stationary,
            **self.counters.as_dict(),
        }


@dataclass(frozen=True)
class MovementCertificate:
    s: float
    c: float
    holds: bool
    distance: float


def movement_bound(x, y, lam, s, c):
    """
    (s, c)-movement bound for the triple (x, y, lam).

    finite s > 1: ||x - y|| >= (lam / c**s) ** (1 / (s - 1))
    s == inf:     ||x - y|| >= 1 / c
    s == 1:       lam <= c
    """
    if s < 1 or c <= 0 or lam <= 0:
        raise InvalidInputError(f'movement bound needs s >= 1, c > 0, lam > 0 (got s={s}, c={c}, lam={lam})')
    distance = float(np.linalg.norm(np.asarray(x) - np.asarray(y)))
    if math.isinf(s):
        holds = distance >= 1.0 / c
    elif s == 1:
        holds = lam <= c
    else:
        holds = distance >= (lam / c ** s) ** (1.0 / (s - 1.0))
    return MovementCertificate(s=s, c=c, holds=bool(holds), distance=distance)


class MSCheck(NamedTuple):
    passed: bool
    x: np.ndarray
    residual: float
    step_norm: float
    grad_x: np.ndarray


def _ms_residual(x, y, grad_x, lam):
    return float(np.linalg.norm(x - (y - grad_x / lam)))


def _finite_gradient(obj, x):
    grad = obj.gradient(x)
    if not np.all(np.isfinite(grad)):
        raise InvalidInputError('gradient has non-finite entries')
    return grad


def check_ms(obj, y, lam, sigma, grad_y=None, hess_y=None):
    """
    Take the exact regularized Newton step at lam and test the MS condition.

    grad_y and hess_y may be supplied to share one Hessian evaluation across
    several checks at the same query point.
    """
    y = np.asarray(y, dtype=float)
    if grad_y is None:
        grad_y = _finite_gradient(obj, y)
    if not np.any(grad_y):
        return MSCheck(True, y.copy(), 0.0, 0.0, grad_y)
    if hess_y is None:
        hess_y = obj.hessian(y)

    x = y + reg_newton_step(hess_y, grad_y, lam)
    grad_x = _finite_gradient(obj, x)
    residual = _ms_residual(x, y, grad_x, lam)
    step_norm = float(np.linalg.norm(x - y))
    passed = residual <= sigma * step_norm
    logger.debug(f'[CheckMS] lambda={lam:.4e} residual={residual:.4e} step={step_norm:.4e} passed={passed}')
    return MSCheck(passed, x, residual, step_norm, grad_x)


def gd_oracle(obj, y, eta):
    """x = y - eta * grad f(y) with lambda = 1 / eta"""
    if not eta > 0:
        raise InvalidInputError(f'step size must be positive, got {eta}')
    y = np.asarray(y, dtype=float)
    grad = _finite_gradient(obj, y)
    x = y - eta * grad
    return OracleResult(
        x=x,
        lam=1.0 / eta,
        ms_residual=math.nan,
        step_norm=float(np.linalg.norm(x - y)),
        counters=OracleCounters(gradient_evals=1),
        kind='GD',
        stationary=not np.any(grad),
    )


def _stationary_result(y, lam, grad_y, kind, lambda_query, counters):
    return OracleResult(
        x=y.copy(), lam=lam, ms_residual=0.0, step_norm=0.0, counters=counters,
        kind=kind, lambda_query=lambda_query, stationary=True, grad_x=grad_y,
    )


def cr_oracle(obj, y, M, lambda_floor=None, tolerance=None):
    """
    Cubic-regularized Newton step.

    Finds lam with lam = (M/2) ||(H + lam I)^{-1} g|| to relative ``tolerance``
    by log-scale bisection, and returns x = y - (H + lam I)^{-1} g.
    When the root lies below ``lambda_floor`` the floor is returned and flagged.
    """
    if not M > 0:
        raise InvalidInputError(f'cubic regularization M must be positive, got {M}')
    lambda_floor = _setting('MSACCEL_LAMBDA_NEWTON', 1e-10) if lambda_floor is None else lambda_floor
    tolerance = _setting('MSACCEL_CR_TOLERANCE', 1e-5) if tolerance is None else tolerance
    lambda_max = _setting('MSACCEL_LAMBDA_MAX', 1e30)

    y = np.asarray(y, dtype=float)
    grad = _finite_gradient(obj, y)
    counters = OracleCounters(gradient_evals=1)
    if not np.any(grad):
        return _stationary_result(y, lambda_floor, grad, 'CR', math.nan, counters)
    hess = obj.hessian(y)
    counters.hessian_evals = 1
    half_m = 0.5 * M

    def solve(lam):
        counters.linear_solves += 1
        step = reg_newton_step(hess, grad, lam)
        return step, lam / (half_m * np.linalg.norm(step))

    lam = lambda_floor
    step, ratio = solve(lam)
    floor_hit = ratio >= 1.0
    if not floor_hit:
        lo = lambda_floor
        hi = max(2.0 * half_m * float(np.linalg.norm(step)), 2.0 * lambda_floor)
        step, ratio = solve(hi)
        while ratio < 1.0:
            lo = hi
            hi *= 2.0
            if hi > lambda_max:
                raise NonConvergenceError(f'cubic step bracket exceeded {lambda_max:.1e}')
            step, ratio = solve(hi)
        lam = hi
        for _ in range(CR_BISECTION_CAP):
            if abs(ratio - 1.0) <= tolerance:
                break
            lam = math.sqrt(lo * hi)
            step, ratio = solve(lam)
            if ratio < 1.0:
                lo = lam
            else:
                hi = lam
        else:
            raise NonConvergenceError(f'cubic step bisection did not reach tolerance {tolerance:.1e}')
    else:
        logger.debug(f'[CubicStep] root below floor {lambda_floor:.1e}')

    x = y + step
    grad_x = _finite_gradient(obj, x)
    counters.gradient_evals += 1
    return OracleResult(
        x=x,
        lam=lam,
        ms_residual=_ms_residual(x, y, grad_x, lam),
        step_norm=float(np.linalg.norm(step)),
        counters=counters,
        kind='CR',
        floor_hit=floor_hit,
        grad_x=grad_x,
    )


def _double_exponential(k):
    return 2.0 ** min(2 ** k, 1023)


def amsn(obj, y, lam_prime, sigma, lazy, lambda_floor=None):
    """
    Adaptive regularized Newton step.

    Searches a double-exponential grid around lam_prime for a regularization
    that passes the MS check while half of it fails, then narrows the
    (invalid, valid) pair with geometric-mean bisection until their ratio is 2.
    With ``lazy`` a passing lam_prime is returned after a single solve.
    The decrease search stops at ``lambda_floor`` and flags the result.
    """
    if not lam_prime > 0:
        raise InvalidInputError(f'lambda must be positive, got {lam_prime}')
    lambda_floor = _setting('MSACCEL_LAMBDA_NEWTON', 1e-10) if lambda_floor is None else lambda_floor
    lambda_max = _setting('MSACCEL_LAMBDA_MAX', 1e30)

    y = np.asarray(y, dtype=float)
    grad = _finite_gradient(obj, y)
    counters = OracleCounters(gradient_evals=1)
    if not np.any(grad):
        return _stationary_result(y, lam_prime, grad, 'AMSN', lam_prime, counters)
    hess = obj.hessian(y)
    counters.hessian_evals = 1

    def check(lam):
        counters.linear_solves += 1
        counters.gradient_evals += 1
        return check_ms(obj, y, lam, sigma, grad_y=grad, hess_y=hess)

    def result(lam, outcome, floor_hit=False):
        return OracleResult(
            x=outcome.x, lam=lam, ms_residual=outcome.residual, step_norm=outcome.step_norm,
            counters=counters, kind='AMSN', lambda_query=lam_prime, floor_hit=floor_hit,
            grad_x=outcome.grad_x,
        )

    first = check(lam_prime)
    k = 0
    if first.passed:
        if lazy:
            return result(lam_prime, first)
        valid, valid_check = lam_prime, first
        while True:
            candidate = valid / _double_exponential(k)
            if candidate < lambda_floor:
                logger.debug(f'[aMSN] decrease search stopped at floor, lambda={valid:.3e}')
                return result(valid, valid_check, floor_hit=True)
            outcome = check(candidate)
            if not outcome.passed:
                invalid = candidate
                break
            valid, valid_check = candidate, outcome
            k += 1
    else:
        invalid = lam_prime
        while True:
            candidate = invalid * _double_exponential(k)
            if candidate > lambda_max:
                raise NonConvergenceError(
                    f'no valid regularization below {lambda_max:.1e} (query lambda={lam_prime:.3e})'
                )
            outcome = check(candidate)
            if outcome.passed:
                valid, valid_check = candidate, outcome
                break
            invalid = candidate
            k += 1

    while invalid < valid / 2.0:
        lam = math.sqrt(invalid * valid)
        outcome = check(lam)
        if outcome.passed:
            valid, valid_check = lam, outcome
        else:
            invalid = lam

    return result(valid, valid_check)


def amsn_fo(obj, y, lam_prime, sigma, cap=None):
    """
    First-order adaptive Newton step, lazy variant.

    Approximates the regularized Newton step with conjugate residuals on
    Hessian-vector products and doubles lam until the MS check passes.
    """
    if not lam_prime > 0:
        raise InvalidInputError(f'lambda must be positive, got {lam_prime}')
    lambda_max = _setting('MSACCEL_LAMBDA_MAX', 1e30)

    y = np.asarray(y, dtype=float)
    grad = _finite_gradient(obj, y)
    counters = OracleCounters(gradient_evals=1)
    if not np.any(grad):
        return _stationary_result(y, lam_prime, grad, 'AMSN_FO', lam_prime, counters)

    lam = lam_prime
    while True:
        def apply_A(v, lam=lam):
            return obj.hvp(y, v) + lam * v

        w, iters, applications = conj_res(apply_A, -grad, lam * sigma, cap=cap)
        counters.linear_solves += 1
        counters.hvps += applications
        x = y + w
        grad_x = _finite_gradient(obj, x)
        counters.gradient_evals += 1
        residual = _ms_residual(x, y, grad_x, lam)
        step_norm = float(np.linalg.norm(w))
        logger.debug(f'[aMSN-fo] lambda={lam:.4e} cr_iters={iters} residual={residual:.4e} step={step_norm:.4e}')
        if residual <= sigma * step_norm:
            return OracleResult(
                x=x, lam=lam, ms_residual=residual, step_norm=step_norm, counters=counters,
                kind='AMSN_FO', lambda_query=lam_prime, grad_x=grad_x,
            )
        lam *= 2.0
        if lam > lambda_max:
            raise NonConvergenceError(f'no valid regularization below {lambda_max:.1e} (query lambda={lam_prime:.3e})')


class MSOracle:
    """Callable wrapper: oracle(y, lam_prime, first=False) -> OracleResult"""

    kind = ''
    sigma = 0.0

    def __init__(self, obj):
        self.obj = obj

    def __call__(self, y, lam_prime, first=False):
        raise NotImplementedError

    def __repr__(self):
        return f'{type(self).__name__}(kind={self.kind}, sigma={self.sigma})'


class GradientStepOracle(MSOracle):
    """
    Plain gradient step. On an L-smooth objective it is an (eta * L)-MS
    oracle with lambda = 1 / eta; ``sigma`` records the factor the caller
    claims for auditing and is 0 when unknown.
    """

    kind = 'GD'

    def __init__(self, obj, eta, sigma=None):
        super().__init__(obj)
        if not eta > 0:
            raise InvalidInputError(f'step size must be positive, got {eta}')
        self.eta = eta
        if sigma is not None:
            self.sigma = sigma

    def __call__(self, y, lam_prime, first=False):
        result = gd_oracle(self.obj, y, self.eta)
        result.lambda_query = lam_prime
        return result


class CubicNewtonOracle(MSOracle):
    kind = 'CR'

    def __init__(self, obj, M, sigma=None):
        super().__init__(obj)
        if not M > 0:
            raise InvalidInputError(f'cubic regularization M must be positive, got {M}')
        self.M = M
        # M >= H / sigma makes the cubic step a sigma-MS oracle
        self.sigma = _setting('MSACCEL_SIGMA', 0.5) if sigma is None else sigma

    def __call__(self, y, lam_prime, first=False):
        result = cr_oracle(self.obj, y, self.M)
        result.lambda_query = lam_prime
        return result


class AdaptiveNewtonOracle(MSOracle):
    """
    aMSN with a lazy flag. ``lazy_first`` overrides the flag on the first
    call of a run, where a movement bound is always needed.
    """

    kind = 'AMSN'

    def __init__(self, obj, sigma=None, lazy=True, lazy_first=False):
        super().__init__(obj)
        self.sigma = _setting('MSACCEL_SIGMA', 0.5) if sigma is None else sigma
        self.lazy = lazy
        self.lazy_first = lazy_first

    def __call__(self, y, lam_prime, first=False):
        lazy = self.lazy_first if first else self.lazy
        return amsn(self.obj, y, lam_prime, self.sigma, lazy)


class AdaptiveFirstOrderOracle(MSOracle):
    kind = 'AMSN_FO'

    def __init__(self, obj, sigma=None, cap=None):
        super().__init__(obj)
        self.sigma = _setting('MSACCEL_SIGMA', 0.5) if sigma is None else sigma
        self.cap = cap

    def __call__(self, y, lam_prime, first=False):
        return amsn_fo(self.obj, y, lam_prime, self.sigma, cap=self.cap)
