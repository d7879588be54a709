"""
LIBSVM text format.

One example per line: a label followed by whitespace-separated
``index:value`` pairs with strictly increasing 1-based indices.
Blank lines and lines starting with '#' are skipped.
"""

import logging
import math
from typing import NamedTuple

import numpy as np

from MSAccel.exceptions import LibSVMParseError
from objectives.functions import Dataset

logger = logging.getLogger(__name__)

LABELS = {'+1': 1.0, '1': 1.0, '-1': -1.0, '0': -1.0}


class RawExample(NamedTuple):
    label: float
    pairs: list


def parse_line(line, line_number):
    tokens = line.split()
    label = LABELS.get(tokens[0])
    if label is None:
        raise LibSVMParseError(f'unrecognized label {tokens[0]!r}', line_number=line_number)
    pairs = []
    previous = 0
    for token in tokens[1:]:
        index_text, sep, value_text = token.partition(':')
        if not sep:
            raise LibSVMParseError(f'expected index:value, got {token!r}', line_number=line_number)
        try:
            index = int(index_text)
            value = float(value_text)
        except ValueError:
            raise LibSVMParseError(f'unparsable pair {token!r}', line_number=line_number) from None
        if index < 1:
            raise LibSVMParseError(f'index {index} is not 1-based', line_number=line_number)
        if index <= previous:
            problem = 'duplicate' if index == previous else 'unsorted'
            raise LibSVMParseError(f'{problem} index {index}', line_number=line_number)
        if not math.isfinite(value):
            raise LibSVMParseError(f'non-finite value in {token!r}', line_number=line_number)
        pairs.append((index, value))
        previous = index
    return RawExample(label, pairs)


def parse_libsvm(text, n_features=None, name='libsvm'):
    """
    Parse LIBSVM text into a dense Dataset.

    Args:
        text: file contents
        n_features: pad rows to this width; defaults to the largest index seen
        name: label carried by the Dataset

    Raises:
        LibSVMParseError: malformed line, with its 1-based line number
    """
    examples = []
    width = 0
    for line_number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith('#'):
            continue
        example = parse_line(stripped, line_number)
        if example.pairs:
            width = max(width, example.pairs[-1][0])
        examples.append(example)

    if n_features is not None:
        if width > n_features:
            raise LibSVMParseError(f'index {width} exceeds the declared {n_features} features')
        width = n_features

    features = np.zeros((len(examples), width))
    labels = np.empty(len(examples))
    for row, example in enumerate(examples):
        labels[row] = example.label
        for index, value in example.pairs:
            features[row, index - 1] = value
    logger.info(f'[LibSVM] parsed {name}: n={len(examples)} d={width}')
    return Dataset(features, labels, name=name)


def load_libsvm(path, n_features=None):
    with open(path, encoding='utf-8') as handle:
        return parse_libsvm(handle.read(), n_features=n_features, name=str(path))


def serialize_libsvm(data):
    """Dense Dataset back to LIBSVM text; zero entries are omitted"""
    lines = []
    for row, label in zip(data.features, data.labels):
        tokens = ['+1' if label > 0 else '-1']
        tokens.extend(f'{j + 1}:{format(value, ".17g")}' for j, value in enumerate(row) if value != 0.0)
        lines.append(' '.join(tokens))
    return '\n'.join(lines) + ('\n' if lines else '')
