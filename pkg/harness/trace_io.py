"""
Trace files.

CSV: one comment line carrying the schema version, a fixed header, then one
row per outer iteration. Floats use 17 significant digits so a trace read
back audits exactly as the in-memory one. The JSON summary written next to
it (same stem, .json) carries the oracle-call log and the run params that
the audit needs.
"""

import csv
import json
import logging
import math
from pathlib import Path

from accel.trace import Trace, TraceRecord
from MSAccel.exceptions import AuditInputError

logger = logging.getLogger(__name__)

SCHEMA = 'msaccel-trace v1'
SUMMARY_SCHEMA = 'msaccel-summary v1'

# (column, TraceRecord attribute)
COLUMNS = (
    ('t', 't'),
    ('f', 'f'),
    ('gap', 'gap'),
    ('A', 'A'),
    ('lambda', 'lam'),
    ('lambda_prime', 'lam_prime'),
    ('up_flag', 'up_flag'),
    ('E', 'E'),
    ('D', 'D'),
    ('N', 'N'),
    ('hess_evals', 'hess_evals'),
    ('lin_solves', 'lin_solves'),
    ('hvps', 'hvps'),
    ('grad_evals', 'grad_evals'),
    ('wall_ms', 'wall_ms'),
)
HEADER = [column for column, _ in COLUMNS]
INT_COLUMNS = {'t', 'hess_evals', 'lin_solves', 'hvps', 'grad_evals'}


def summary_path(path):
    return Path(path).with_suffix('.json')


def _format(column, value):
    if column == 'up_flag':
        return '1' if value else '0'
    if column in INT_COLUMNS:
        return str(int(value))
    return format(float(value), '.17g')


def write_trace_csv(trace, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='', encoding='utf-8') as handle:
        handle.write(f'# {SCHEMA}\n')
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(HEADER)
        for rec in trace.records:
            writer.writerow([_format(column, getattr(rec, attr)) for column, attr in COLUMNS])
    logger.info(f'[TraceIO] wrote {len(trace.records)} rows to {path}')
    return path


def write_summary(summary, path):
    path = summary_path(path)
    with open(path, 'w', encoding='utf-8') as handle:
        json.dump(summary, handle, indent=2, allow_nan=False)
        handle.write('\n')
    return path


def _parse_row(row, line_number):
    if len(row) != len(HEADER):
        raise AuditInputError(f'row {line_number} has {len(row)} columns, expected {len(HEADER)}')
    values = {}
    for (column, attr), text in zip(COLUMNS, row):
        try:
            if column == 'up_flag':
                if text not in ('0', '1'):
                    raise ValueError(text)
                values[attr] = text == '1'
            elif column in INT_COLUMNS:
                values[attr] = int(text)
            else:
                values[attr] = float(text)
        except ValueError:
            raise AuditInputError(f'row {line_number}: bad {column} value {text!r}') from None
    return TraceRecord(**values)


def _as_float(value):
    return math.nan if value is None else float(value)


def read_trace(path):
    """
    Rebuild a Trace from a CSV and its JSON summary.

    The summary supplies the method, params and oracle-call log; without it
    only the potential and growth-free checks have data.
    """
    path = Path(path)
    if not path.is_file():
        raise AuditInputError(f'no trace file at {path}')
    with open(path, newline='', encoding='utf-8') as handle:
        first = handle.readline().strip()
        if first != f'# {SCHEMA}':
            raise AuditInputError(f'{path} is not a {SCHEMA} file (first line {first!r})')
        reader = csv.reader(handle)
        header = next(reader, None)
        if header != HEADER:
            raise AuditInputError(f'unexpected header {header}')
        records = [_parse_row(row, number) for number, row in enumerate(reader, start=3) if row]

    method, params, calls = 'unknown', {}, []
    sidecar = summary_path(path)
    if sidecar.is_file():
        with open(sidecar, encoding='utf-8') as handle:
            summary = json.load(handle)
        if summary.get('schema') != SUMMARY_SCHEMA:
            raise AuditInputError(f'{sidecar} is not a {SUMMARY_SCHEMA} file')
        method = summary.get('method', method)
        params = summary.get('params') or {}
        calls = [
            {
                **call,
                'lambda_query': _as_float(call.get('lambda_query')),
                'lam': _as_float(call.get('lam')),
                'ms_residual': _as_float(call.get('ms_residual')),
                'step_norm': _as_float(call.get('step_norm')),
            }
            for call in summary.get('calls', [])
        ]
    else:
        logger.warning(f'[TraceIO] no summary next to {path}; oracle-call checks are skipped')

    trace = Trace(method, params=params)
    trace.records = records
    trace.calls = calls
    trace.status = 'loaded'
    return trace
