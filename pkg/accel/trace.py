"""
Per-iteration run records shared by the acceleration loops and the baselines.
"""

import math
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from MSAccel.exceptions import DivergenceError
from oracles.ms_oracles import OracleCounters

NAN = math.nan


@dataclass
class RunBudget:
    """Stop conditions; any that is None is ignored"""

    max_oracle_calls: Optional[int] = None
    target_gap: Optional[float] = None
    max_seconds: Optional[float] = None

    @property
    def bounded(self):
        return any(limit is not None for limit in (self.max_oracle_calls, self.target_gap, self.max_seconds))


@dataclass
class TraceRecord:
    t: int
    f: float
    gap: float
    A: float = NAN
    lam: float = NAN
    lam_prime: float = NAN
    up_flag: bool = False
    E: float = NAN
    D: float = NAN
    N: float = NAN
    A_prime: float = NAN
    hess_evals: int = 0
    lin_solves: int = 0
    hvps: int = 0
    grad_evals: int = 0
    wall_ms: float = 0.0
    oracle_calls: int = 0
    best_f: float = NAN

    def as_dict(self):
        return asdict(self)


class Trace:
    """
    Growing list of TraceRecords plus the run's cumulative counters and
    the per-oracle-call log.
    """

    def __init__(self, method, params=None, f_star=None, x_star=None):
        self.method = method
        self.params = dict(params or {})
        self.f_star = f_star
        self.x_star = None if x_star is None else np.asarray(x_star, dtype=float)
        self.records = []
        self.calls = []
        self.counters = OracleCounters()
        self.status = 'running'
        self._started = time.perf_counter()

    # bookkeeping

    def charge(self, counters):
        self.counters = self.counters + counters

    def charge_gradient(self, count=1):
        self.counters.gradient_evals += count

    def log_call(self, result, iteration):
        self.charge(result.counters)
        self.calls.append({'t': iteration, **result.log_entry()})

    @property
    def oracle_calls(self):
        return len(self.calls)

    def elapsed_ms(self):
        return (time.perf_counter() - self._started) * 1000.0

    def gap_of(self, f_value):
        return NAN if self.f_star is None else f_value - self.f_star

    def distance_term(self, v):
        if self.x_star is None:
            return NAN
        return 0.5 * float(np.sum((np.asarray(v) - self.x_star) ** 2))

    def record(self, t, x, f_value, **fields):
        if not (math.isfinite(f_value) and np.all(np.isfinite(x))):
            raise DivergenceError(f'{self.method} produced a non-finite iterate', iteration=t, trace=self)
        best = f_value if not self.records else min(self.records[-1].best_f, f_value)
        gap = self.gap_of(f_value)
        A = fields.get('A', NAN)
        rec = TraceRecord(
            t=t,
            f=f_value,
            gap=gap,
            E=gap if math.isfinite(A) else NAN,
            hess_evals=self.counters.hessian_evals,
            lin_solves=self.counters.linear_solves,
            hvps=self.counters.hvps,
            grad_evals=self.counters.gradient_evals,
            wall_ms=self.elapsed_ms(),
            oracle_calls=self.oracle_calls,
            best_f=best,
            **fields,
        )
        self.records.append(rec)
        return rec

    # queries

    @property
    def last(self):
        return self.records[-1] if self.records else None

    def final_gap(self):
        return self.last.gap if self.records else NAN

    def best_gap(self):
        return self.gap_of(self.last.best_f) if self.records else NAN

    def exhausted(self, budget):
        """True when the budget or the target gap stops the run"""
        if budget is None:
            return False
        if budget.max_oracle_calls is not None and self.oracle_calls >= budget.max_oracle_calls:
            self.status = 'budget'
            return True
        if budget.target_gap is not None and self.records and self.last.gap <= budget.target_gap:
            self.status = 'target'
            return True
        if budget.max_seconds is not None and self.elapsed_ms() >= 1000.0 * budget.max_seconds:
            self.status = 'timeout'
            return True
        return False

    def finish(self, status=None):
        if status is not None or self.status == 'running':
            self.status = status or 'done'
        return self

    def __len__(self):
        return len(self.records)

    def __repr__(self):
        return f'Trace(method={self.method}, records={len(self.records)}, status={self.status})'
