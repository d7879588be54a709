"""
Test functions behind a uniform differentiable-objective interface.

Every objective exposes ``dim``, ``value``, ``gradient``, a dense symmetric
``hessian`` and a matrix-free ``hvp``. Objectives are immutable after
construction, so all evaluations are safe to call from several threads.
"""

import hashlib
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from MSAccel.exceptions import InvalidInputError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Dataset:
    """n feature vectors of dimension d with labels in {-1, +1}"""

    features: np.ndarray
    labels: np.ndarray
    zero_rows: int = 0
    name: str = field(default='dataset', compare=False)

    def __post_init__(self):
        features = np.array(self.features, dtype=float, copy=True)
        labels = np.array(self.labels, dtype=float, copy=True)
        if features.ndim != 2:
            raise InvalidInputError(f'features must be a matrix, got shape {features.shape}')
        if labels.shape != (features.shape[0],):
            raise InvalidInputError(
                f'{labels.shape[0] if labels.ndim else 0} labels for {features.shape[0]} rows'
            )
        if labels.size and not np.all(np.isin(labels, (-1.0, 1.0))):
            raise InvalidInputError('labels must be -1 or +1')
        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, 'features', features)
        object.__setattr__(self, 'labels', labels)

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def d(self):
        return self.features.shape[1]

    def fingerprint(self):
        digest = hashlib.sha256()
        digest.update(np.asarray(self.features.shape, dtype=np.int64).tobytes())
        digest.update(self.features.tobytes())
        digest.update(self.labels.tobytes())
        return digest.hexdigest()


class Objective:
    """
    Capability bundle for a twice-differentiable convex function.

    Subclasses implement ``value``, ``gradient``, ``hessian`` and ``hvp``.
    ``minimizer()`` returns a closed-form minimizer when one is known.
    """

    name = 'objective'

    def __init__(self, dim):
        if dim < 1:
            raise InvalidInputError(f'dimension must be positive, got {dim}')
        self.dim = int(dim)

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise InvalidInputError(f'{self.name}: expected vector of length {self.dim}, got shape {x.shape}')
        return x

    def value(self, x):
        raise NotImplementedError

    def gradient(self, x):
        raise NotImplementedError

    def hessian(self, x):
        raise NotImplementedError

    def hvp(self, x, v):
        raise NotImplementedError

    def minimizer(self):
        return None

    def fingerprint(self):
        raise NotImplementedError


class LogisticObjective(Objective):
    """f(x) = (1/n) sum_i log(1 + exp(-c_i phi_i^T x)), no intercept"""

    name = 'logistic'

    def __init__(self, data):
        if data.n == 0:
            raise InvalidInputError('logistic regression needs at least one example')
        super().__init__(data.d)
        self.data = data
        # Rows pre-multiplied by their labels: z = C Phi x
        self._signed = data.features * data.labels[:, None]
        self._signed.setflags(write=False)

    def _margins(self, x):
        return self._signed @ self._check(x)

    def value(self, x):
        return float(np.mean(np.logaddexp(0.0, -self._margins(x))))

    def gradient(self, x):
        z = self._margins(x)
        return -(self._signed.T @ expit(-z)) / self.data.n

    def hessian(self, x):
        s = expit(self._margins(x))
        weights = s * (1.0 - s)
        phi = self.data.features
        H = (phi.T * weights) @ phi / self.data.n
        # exact symmetry by construction
        return 0.5 * (H + H.T)

    def hvp(self, x, v):
        v = self._check(v)
        s = expit(self._margins(x))
        phi = self.data.features
        return phi.T @ (s * (1.0 - s) * (phi @ v)) / self.data.n

    def fingerprint(self):
        return f'logistic:{self.data.fingerprint()}'


class CubicChainObjective(Objective):
    """
    Worst-case chain f(x) = |x1 - 1|^3 + sum_{i>=2} |x_i - x_{i-1}|^3.

    With u = Dx - e1 (D the forward difference operator with D x = (x1, x2-x1, ...)),
    f = sum |u_i|^3, grad = D^T (3 u|u|) and hess = D^T diag(6|u|) D.
    """

    name = 'worst-case'

    def __init__(self, dim):
        super().__init__(dim)
        # |Dz|_inf <= sqrt(2)|z|, ||D||^2 <= 4, so ||hess(x) - hess(y)|| <= 4 * 6 * sqrt(2) |x - y|
        self.hessian_lipschitz = 24.0 * math.sqrt(2.0)

    @staticmethod
    def _diff(v):
        return np.diff(v, prepend=0.0)

    @staticmethod
    def _diff_transpose(w):
        return w - np.append(w[1:], 0.0)

    def _chain(self, x):
        u = self._diff(self._check(x))
        u[0] -= 1.0
        return u

    def value(self, x):
        return float(np.sum(np.abs(self._chain(x)) ** 3))

    def gradient(self, x):
        u = self._chain(x)
        return self._diff_transpose(3.0 * u * np.abs(u))

    def hessian(self, x):
        h = 6.0 * np.abs(self._chain(x))
        main = h + np.append(h[1:], 0.0)
        off = -h[1:]
        return np.diag(main) + np.diag(off, 1) + np.diag(off, -1)

    def hvp(self, x, v):
        h = 6.0 * np.abs(self._chain(x))
        return self._diff_transpose(h * self._diff(self._check(v)))

    def minimizer(self):
        return np.ones(self.dim)

    def fingerprint(self):
        return f'worst-case:d={self.dim}'


class QuadraticObjective(Objective):
    """f(x) = 0.5 x^T Q x - b^T x"""

    name = 'quadratic'

    def __init__(self, Q, b):
        Q = np.array(Q, dtype=float, ndmin=2)
        b = np.array(b, dtype=float, ndmin=1)
        if Q.shape[0] != Q.shape[1] or b.shape != (Q.shape[0],):
            raise InvalidInputError(f'incompatible shapes Q{Q.shape}, b{b.shape}')
        if not np.array_equal(Q, Q.T):
            raise InvalidInputError('Q must be symmetric')
        super().__init__(Q.shape[0])
        Q.setflags(write=False)
        b.setflags(write=False)
        self.Q = Q
        self.b = b

    def value(self, x):
        x = self._check(x)
        return float(0.5 * x @ self.Q @ x - self.b @ x)

    def gradient(self, x):
        return self.Q @ self._check(x) - self.b

    def hessian(self, x):
        self._check(x)
        return self.Q.copy()

    def hvp(self, x, v):
        return self.Q @ self._check(v)

    def minimizer(self):
        solution, *_ = np.linalg.lstsq(self.Q, self.b, rcond=None)
        return solution

    def fingerprint(self):
        digest = hashlib.sha256(self.Q.tobytes() + self.b.tobytes()).hexdigest()
        return f'quadratic:{digest}'


def make_logistic(data):
    return LogisticObjective(data)


def make_worst_case(d):
    return CubicChainObjective(d)


def make_quadratic(Q, b):
    return QuadraticObjective(Q, b)


def hessian_lipschitz_bound(data):
    """
    Upper bound H-bar on (6 sqrt 3 times) the logistic Hessian-Lipschitz constant.

    Returns ||(1/n) Phi^T Phi||_op * max_i ||phi_i||.
    """
    if data.n == 0:
        raise InvalidInputError('empty dataset')
    phi = data.features
    second_moment = np.linalg.norm(phi, 2) ** 2 / data.n
    max_row = float(np.max(np.linalg.norm(phi, axis=1)))
    bound = float(second_moment * max_row)
    logger.debug(f'[HBar] n={data.n} d={data.d} op_norm={second_moment:.6g} max_row={max_row:.6g}')
    return bound
