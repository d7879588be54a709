"""
Experiment configuration: the objective spec grammar and the validated
config object handed to run_experiment.

Objective specs:
    synthetic:n=500,d=200,seed=1   Gaussian-mixture logistic (seed defaults to --seed)
    worst-case:d=300               cubic chain
    quadratic:path/to/problem.npz  0.5 x^T Q x - b^T x, arrays Q and b
    libsvm:path/to/file            LIBSVM logistic; a bare path means the same
"""

import os
from dataclasses import asdict, dataclass
from typing import Optional

from accel.schemes import DAMPING_MODES
from accel.trace import RunBudget
from baselines.methods import BASELINE_METHODS
from MSAccel.exceptions import ConfigError

ACCEL_METHODS = ('OPTMS', 'MS')
METHODS = ACCEL_METHODS + BASELINE_METHODS
ORACLES = ('AMSN', 'AMSN_FO', 'CR', 'GD')
DATA_KINDS = ('synthetic', 'worst-case', 'quadratic', 'libsvm')


@dataclass(frozen=True)
class DataSpec:
    kind: str
    path: Optional[str] = None
    n: Optional[int] = None
    d: Optional[int] = None
    seed: Optional[int] = None

    def label(self):
        if self.kind == 'synthetic':
            return f'synthetic:n={self.n},d={self.d},seed={self.seed}'
        if self.kind == 'worst-case':
            return f'worst-case:d={self.d}'
        return f'{self.kind}:{self.path}'


def _parse_fields(body, allowed, text):
    fields = {}
    for item in filter(None, body.split(',')):
        key, sep, value = item.partition('=')
        key = key.strip()
        if not sep or key not in allowed:
            raise ConfigError(f'bad field {item!r} in objective spec {text!r}; expected {", ".join(allowed)}')
        try:
            fields[key] = int(value)
        except ValueError:
            raise ConfigError(f'{key} must be an integer in objective spec {text!r}') from None
    return fields


def parse_data_spec(text, seed=None):
    """Parse an objective spec; raises ConfigError on malformed specs or missing files"""
    text = (text or '').strip()
    if not text:
        raise ConfigError('empty objective spec')
    kind, sep, body = text.partition(':')
    if not sep or kind not in DATA_KINDS:
        kind, body = 'libsvm', text

    if kind == 'synthetic':
        fields = _parse_fields(body, ('n', 'd', 'seed'), text)
        if 'n' not in fields or 'd' not in fields:
            raise ConfigError(f'synthetic spec needs n and d: {text!r}')
        if fields['n'] < 2 or fields['n'] % 2 or fields['d'] < 1:
            raise ConfigError(f'synthetic spec needs an even n >= 2 and d >= 1: {text!r}')
        return DataSpec('synthetic', n=fields['n'], d=fields['d'], seed=fields.get('seed', seed or 0))

    if kind == 'worst-case':
        fields = _parse_fields(body, ('d',), text)
        if fields.get('d', 0) < 1:
            raise ConfigError(f'worst-case spec needs d >= 1: {text!r}')
        return DataSpec('worst-case', d=fields['d'])

    if not os.path.isfile(body):
        raise ConfigError(f'no such {kind} file: {body}')
    return DataSpec(kind, path=body)


@dataclass
class ExperimentConfig:
    method: str
    data: DataSpec
    oracle: Optional[str] = None
    alpha: Optional[float] = None
    sigma: Optional[float] = None
    lambda0: Optional[float] = None
    eta: Optional[float] = None
    M: Optional[float] = None
    H: Optional[float] = None
    h_scale: Optional[float] = None
    rho: Optional[float] = None
    damping: str = 'on'
    lazy: Optional[bool] = None
    budget_calls: Optional[int] = None
    max_seconds: Optional[float] = None
    target_gap: Optional[float] = None
    seed: int = 0
    out: Optional[str] = None
    audit: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f'unknown method {self.method!r}')
        if self.damping not in DAMPING_MODES:
            raise ConfigError(f'damping must be one of {DAMPING_MODES}')
        if self.lazy is None:
            self.lazy = self.method == 'OPTMS'

    @property
    def budget(self):
        return RunBudget(
            max_oracle_calls=self.budget_calls,
            target_gap=self.target_gap,
            max_seconds=self.max_seconds,
        )

    def as_dict(self):
        echo = asdict(self)
        echo['data'] = self.data.label()
        return echo
