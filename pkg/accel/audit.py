"""
Post-hoc verification of a finished run against the potential argument.

Checks:
    potential    A_{t+1}E_{t+1} + D_{t+1} + (1 - sigma^2) A'_{t+1} min(lambda, lambda') N_{t+1} <= A_t E_t + D_t
    growth       sqrt(A_T) >= (sqrt(alpha) - 1) / (4 alpha) * sum_t 1/sqrt(lambda'_t), every prefix
    down_steps   sqrt(A_T) >= 1/2 * sum over down steps of 1/sqrt(lambda'_t), every prefix
    ms_residual  every logged oracle call satisfies the MS inequality
    solve_count  every non-floor aMSN call uses at most 2 + 2 log2(1 + |log2(lambda/lambda')|) solves

A'_{t+1} is recomputed from A_t and lambda'_{t+1}, so a tampered A column
shows up in the potential check.
"""

import logging
import math
from dataclasses import asdict, dataclass

from accel.schemes import a_prime
from MSAccel.exceptions import AuditInputError

logger = logging.getLogger(__name__)

POTENTIAL_RTOL = 1e-8
POTENTIAL_ATOL = 1e-12
GROWTH_RTOL = 1e-8
MS_SLACK = 1e-9


@dataclass
class AuditCheck:
    name: str
    passed: bool = True
    worst_slack: float = math.inf
    worst_t: int = -1
    evaluated: int = 0

    def observe(self, slack, t):
        self.evaluated += 1
        if slack < self.worst_slack:
            self.worst_slack = slack
            self.worst_t = t
        if slack < 0:
            self.passed = False


@dataclass
class AuditReport:
    checks: dict

    @property
    def passed(self):
        return all(check.passed for check in self.checks.values())

    @property
    def verdict(self):
        return 'pass' if self.passed else 'fail'

    def failed(self):
        return [name for name, check in self.checks.items() if not check.passed]

    def as_dict(self):
        return {
            'verdict': self.verdict,
            'checks': {
                name: {**asdict(check), 'worst_slack': _finite_or_none(check.worst_slack)}
                for name, check in self.checks.items()
            },
        }


def _finite_or_none(value):
    return value if math.isfinite(value) else None


def solve_count_bound(lam, lam_prime):
    bound = 2.0 + 2.0 * math.log2(1.0 + abs(math.log2(lam / lam_prime)))
    return math.ceil(bound - 1e-9)


def _require_potential_fields(records):
    if len(records) < 2:
        raise AuditInputError('trace needs at least one iteration to audit')
    for rec in records:
        for name in ('A', 'E', 'D'):
            if not math.isfinite(getattr(rec, name)):
                raise AuditInputError(f'trace row t={rec.t} has no finite {name}; was a reference optimum supplied?')
    for rec in records[1:]:
        for name in ('lam', 'lam_prime', 'N'):
            if not math.isfinite(getattr(rec, name)):
                raise AuditInputError(f'trace row t={rec.t} has no finite {name}')


def audit_potential(trace, obj=None, reference_opt=None, sigma=None, alpha=None):
    """
    Audit a Trace. sigma and alpha default to the run's recorded params.

    When obj and reference_opt are both given, E_t is recomputed from the
    recorded f_t against obj(reference_opt).
    """
    records = trace.records
    _require_potential_fields(records)
    sigma = trace.params.get('sigma') if sigma is None else sigma
    if sigma is None:
        raise AuditInputError('sigma is neither recorded in the trace nor supplied')
    alpha = trace.params.get('alpha') if alpha is None else alpha

    f_star = None
    if obj is not None and reference_opt is not None:
        f_star = obj.value(reference_opt)

    def energy(rec):
        E = rec.f - f_star if f_star is not None else rec.E
        return rec.A * E + rec.D

    checks = {name: AuditCheck(name) for name in ('potential', 'growth', 'down_steps', 'ms_residual', 'solve_count')}

    for prev, cur in zip(records, records[1:]):
        before = energy(prev)
        A_hat = prev.A + a_prime(cur.lam_prime, prev.A)
        after = energy(cur) + (1.0 - sigma ** 2) * A_hat * min(cur.lam, cur.lam_prime) * cur.N
        tol = POTENTIAL_RTOL * abs(before) + POTENTIAL_ATOL
        checks['potential'].observe(before + tol - after, cur.t)

    inverse_sum = 0.0
    down_sum = 0.0
    growth_factor = (math.sqrt(alpha) - 1.0) / (4.0 * alpha) if alpha is not None else None
    for rec in records[1:]:
        inv = 1.0 / math.sqrt(rec.lam_prime)
        inverse_sum += inv
        if rec.lam <= rec.lam_prime:
            down_sum += inv
        root_A = math.sqrt(max(rec.A, 0.0))
        checks['down_steps'].observe(root_A - 0.5 * down_sum + GROWTH_RTOL * root_A, rec.t)
        if growth_factor is not None and trace.method == 'OPTMS':
            checks['growth'].observe(root_A - growth_factor * inverse_sum + GROWTH_RTOL * root_A, rec.t)

    for index, call in enumerate(trace.calls):
        residual = call.get('ms_residual', math.nan)
        step = call.get('step_norm', math.nan)
        if residual is not None and math.isfinite(residual) and math.isfinite(step):
            checks['ms_residual'].observe(sigma * step + MS_SLACK * (1.0 + step) - residual, call.get('t', index))
        if call.get('kind') == 'AMSN' and not call.get('floor_hit') and not call.get('stationary'):
            bound = solve_count_bound(call['lam'], call['lambda_query'])
            checks['solve_count'].observe(bound - call['linear_solves'], call.get('t', index))

    report = AuditReport(checks)
    for name, check in checks.items():
        logger.info(
            f'[Audit] {name}: {"pass" if check.passed else "FAIL"} evaluated={check.evaluated} '
            f'worst_slack={check.worst_slack:.3e} at t={check.worst_t}'
        )
    return report
