"""
Exceptions, warnings and small helpers shared by every `sonoglove` module.
"""
import csv
import logging

import numpy as np

__all__ = ['GloveValueError', 'LimitError', 'DegenerateError', 'ShapeError',
           'InconsistentRangesError', 'CheckpointError', 'DatasetError',
           'GloveKeyError', 'NonFiniteError', 'StudyAssertionError', 'StreamAbort',
           'GloveWarning', 'GloveClampWarning',
           'check_finite', 'check_shape', 'child_seeds', 'format_table', 'write_csv']
log = logging.getLogger(__name__)


class GloveValueError(ValueError):
    pass


class LimitError(GloveValueError):
    """angle outside its anatomical interval"""
    def __init__(self, dof, value, lo, hi):
        super(LimitError, self).__init__(
            "DOF %r = %.6g outside [%.6g, %.6g]" % (dof, value, lo, hi))
        self.dof = dof


class DegenerateError(GloveValueError):
    pass


class ShapeError(GloveValueError):
    pass


class InconsistentRangesError(GloveValueError):
    pass


class CheckpointError(GloveValueError):
    pass


class DatasetError(GloveValueError):
    pass


class GloveKeyError(KeyError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class StudyAssertionError(AssertionError):
    """an experiment's expected ordering did not hold"""
    def __init__(self, msg, result=None):
        super(StudyAssertionError, self).__init__(msg)
        self.result = result


class StreamAbort(RuntimeError):
    pass


class GloveWarning(Warning):
    """base class for all sonoglove warnings.

    Used for non-fatal data-quality events, such as clamped coefficients.
    """
    pass


class GloveClampWarning(GloveWarning, RuntimeWarning):
    pass


def check_finite(name, arr):
    """Raise `NonFiniteError` if `arr` holds any NaN/Inf, else return it."""
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("non-finite values in " + name)
    return arr


def check_shape(name, arr, shape):
    """
    Check `arr.shape` against `shape`, where `None` entries match anything.
    """
    if arr.ndim != len(shape) or any(
            s is not None and s != a for a, s in zip(arr.shape, shape)):
        raise ShapeError("%s: expected shape %s, got %s" % (
            name, tuple('?' if s is None else s for s in shape), arr.shape))
    return arr


def child_seeds(seed, n):
    """
    `n` independent integer seeds derived from `seed`, stable across
    processes and worker counts.
    """
    return [int(s.generate_state(1)[0])
            for s in np.random.SeedSequence(seed).spawn(n)]


def _fmt(val):
    if isinstance(val, float):
        return "%.6g" % val
    return str(val)


def format_table(header, rows):
    """
    Render `rows` (sequences matching `header`) as aligned plain text.
    """
    cells = [list(map(str, header))] + [[_fmt(v) for v in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ['  '.join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
    lines.insert(1, '  '.join('-' * w for w in widths))
    return '\n'.join(lines) + '\n'


def write_csv(path, header, rows):
    with open(path, 'w', newline='') as fd:
        writer = csv.writer(fd)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    log.info("written:%s", path)
