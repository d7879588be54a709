"""
Preprocessing and the two-Gaussian synthetic classification set.
"""

import logging

import numpy as np

from MSAccel.exceptions import InvalidInputError
from objectives.functions import Dataset

logger = logging.getLogger(__name__)

MEAN_RADIUS = 0.5


def normalize_rows(data):
    """Scale every nonzero row to unit norm; zero rows stay as they are"""
    norms = np.linalg.norm(data.features, axis=1)
    zero = norms == 0.0
    scale = np.where(zero, 1.0, norms)
    zero_rows = int(np.count_nonzero(zero))
    if zero_rows:
        logger.warning(f'[Normalize] {data.name}: {zero_rows} zero feature rows left unscaled')
    return Dataset(data.features / scale[:, None], data.labels, zero_rows=zero_rows, name=data.name)


def _sphere_point(rng, d, radius):
    direction = rng.standard_normal(d)
    return radius * direction / np.linalg.norm(direction)


def synthetic_gaussian(n, d, seed, return_means=False):
    """
    n/2 points from N(mu1, I) labeled +1 and n/2 from N(mu2, I) labeled -1,
    with mu1, mu2 uniform on the sphere of radius 0.5, rows then unit-normalized.

    numpy's PCG64 generator seeded with ``seed`` drives every draw, in the
    order mu1, mu2, positive samples, negative samples.
    """
    if n < 2 or n % 2:
        raise InvalidInputError(f'synthetic data needs an even n >= 2, got {n}')
    if d < 1:
        raise InvalidInputError(f'synthetic data needs d >= 1, got {d}')
    rng = np.random.default_rng(seed)
    mu1 = _sphere_point(rng, d, MEAN_RADIUS)
    mu2 = _sphere_point(rng, d, MEAN_RADIUS)
    half = n // 2
    positives = mu1 + rng.standard_normal((half, d))
    negatives = mu2 + rng.standard_normal((half, d))
    raw = Dataset(
        np.vstack([positives, negatives]),
        np.concatenate([np.ones(half), -np.ones(half)]),
        name=f'synthetic:n={n},d={d},seed={seed}',
    )
    data = normalize_rows(raw)
    if return_means:
        return data, mu1, mu2
    return data
