"""
Regularized symmetric solves and the Conjugate Residuals iteration.

reg_newton_step is a direct Cholesky solve of (H + lambda I) w = -g.
conj_res is the matrix-free MinRes/CR recursion, stopped as soon as the
residual falls below threshold/2 times the iterate norm.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from MSAccel.exceptions import InvalidInputError, IterationBudgetError, RegularizedSolveError

logger = logging.getLogger(__name__)

RESIDUAL_RECHECK_EVERY = 50
RESIDUAL_DRIFT_TOLERANCE = 1e-8
SOLVE_RESIDUAL_TOLERANCE = 1e-10
JITTER_SCALE = 1e-12


def reg_newton_step(H, g, lam):
    """
    Solve (H + lam*I) w = -g.

    Args:
        H: symmetric positive semidefinite (d, d) matrix
        g: gradient vector of length d
        lam: regularization, strictly positive

    Returns:
        w as a new array

    Raises:
        InvalidInputError: lam <= 0 or shapes mismatch
        RegularizedSolveError: factorization failed even after inflating lam
    """
    H = np.asarray(H, dtype=float)
    g = np.asarray(g, dtype=float)
    if not lam > 0:
        raise InvalidInputError(f'regularization must be positive, got {lam}')
    if H.ndim != 2 or H.shape[0] != H.shape[1] or g.shape != (H.shape[0],):
        raise InvalidInputError(f'incompatible shapes H{H.shape}, g{g.shape}')

    d = g.shape[0]
    shift = lam
    factor = None
    for attempt in range(2):
        try:
            factor = cho_factor(H + shift * np.eye(d), lower=False, check_finite=True)
            break
        except (LinAlgError, ValueError) as exc:
            if attempt == 1:
                raise RegularizedSolveError(
                    f'Cholesky factorization of H + {shift:.3e} I failed: {exc}'
                ) from exc
            bump = JITTER_SCALE * max(1.0, abs(float(np.trace(H))))
            logger.warning(f'[RegSolve] factorization failed at lambda={lam:.3e}, retrying with +{bump:.3e}')
            shift = lam + bump

    w = -cho_solve(factor, g)
    residual = np.linalg.norm(H @ w + shift * w + g)
    limit = SOLVE_RESIDUAL_TOLERANCE * (np.linalg.norm(g) + shift * np.linalg.norm(w))
    if residual > limit and residual > np.finfo(float).tiny:
        logger.warning(f'[RegSolve] residual {residual:.3e} above {limit:.3e} at lambda={lam:.3e}')
    return w


@dataclass
class ConjResState:
    """Iterate, residual and the auxiliary CR vectors"""

    w: np.ndarray
    r: np.ndarray
    p: np.ndarray
    q: np.ndarray
    s: np.ndarray
    iter: int = 0

    @property
    def residual_norm(self):
        return float(np.linalg.norm(self.r))

    @property
    def iterate_norm(self):
        return float(np.linalg.norm(self.w))


def default_cap(dim):
    return 10 * dim + 100


def conj_res(apply_A, b, threshold, cap=None, callback=None):
    """
    Approximately solve A w = b for a symmetric PSD operator.

    Stops at the first iterate with ||A w - b|| <= (threshold / 2) ||w||.
    The test runs before every iteration, so b = 0 returns w = 0 without
    touching the operator.

    Args:
        apply_A: callable v -> A v
        b: right-hand side
        threshold: the product lambda * sigma, strictly positive
        cap: iteration limit, defaults to 10 * dim + 100
        callback: optional callable receiving the ConjResState after each iteration

    Returns:
        (w, iterations, operator_applications)

    Raises:
        IterationBudgetError: cap reached before the stopping test passed
        InvalidInputError: non-finite input or a breakdown of the recursion
    """
    b = np.asarray(b, dtype=float)
    if not np.all(np.isfinite(b)):
        raise InvalidInputError('right-hand side has non-finite entries')
    if not threshold > 0:
        raise InvalidInputError(f'threshold must be positive, got {threshold}')
    cap = default_cap(b.shape[0]) if cap is None else int(cap)

    # w0 = 0, so r0 = -b
    r = -b.copy()
    state = ConjResState(w=np.zeros_like(b), r=r, p=r.copy(), q=None, s=None)
    applications = 0

    def stop():
        return state.residual_norm <= 0.5 * threshold * state.iterate_norm

    if stop():
        return state.w, 0, 0

    state.s = apply_A(state.r)
    state.q = state.s.copy()
    applications += 1
    rs = float(state.r @ state.s)

    while not stop():
        if state.iter >= cap:
            raise IterationBudgetError(
                f'conjugate residuals did not meet the stopping test in {cap} iterations '
                f'(residual {state.residual_norm:.3e})',
                last_residual=state.residual_norm,
            )
        qq = float(state.q @ state.q)
        if qq == 0.0 or not np.isfinite(qq):
            raise InvalidInputError(f'conjugate residuals broke down at iteration {state.iter}')
        step = rs / qq
        state.w = state.w - step * state.p
        state.r = state.r - step * state.q
        state.s = apply_A(state.r)
        applications += 1
        rs_next = float(state.r @ state.s)
        beta = rs_next / rs if rs != 0.0 else 0.0
        state.p = beta * state.p + state.r
        state.q = beta * state.q + state.s
        rs = rs_next
        state.iter += 1

        if state.iter % RESIDUAL_RECHECK_EVERY == 0:
            exact = apply_A(state.w) - b
            applications += 1
            drift = np.linalg.norm(exact - state.r)
            scale = max(np.linalg.norm(b), np.finfo(float).tiny)
            if drift > RESIDUAL_DRIFT_TOLERANCE * scale:
                logger.warning(f'[ConjRes] residual drift {drift:.3e} at iteration {state.iter}')
        if callback is not None:
            callback(state)
        if rs == 0.0 and not stop():
            # A r = 0 with r != 0: b has a component in the null space of A
            raise InvalidInputError(f'conjugate residuals stalled at iteration {state.iter}')

    return state.w, state.iter, applications
