#!python
# -*- Python -*-
"""
Central finite-difference checks of tape gradients.

Run in float64; at float32 the differences are dominated by rounding.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T


logger = logging.getLogger(__name__)


@dataclass
class GradCheckReport:
    name: str
    checked: int = 0
    max_rel_error: float = 0.0
    failures: list = field(default_factory=list)
    rtol: float = 1e-4

    @property
    def passed(self):
        return not self.failures

    def __str__(self):
        status = 'ok' if self.passed else 'FAILED ({0} entries)'.format(len(self.failures))
        return '{0}: {1} entries, max rel err {2:.2e} {3}'.format(
            self.name, self.checked, self.max_rel_error, status)


def check_gradients(fn, tensors, name='gradcheck', h=1e-5, rtol=1e-4, small=1e-8,
                    max_entries=None, rng=None):
    """
    fn() must build a scalar Tensor from the leaf tensors in `tensors`.
    Compares tape gradients with (f(x+h) - f(x-h)) / 2h entry by entry.
    Entries where both gradients are below `small` are compared absolutely.
    With max_entries set, that many entries per tensor are sampled.
    """
    with T.Tape() as tape:
        loss = fn()
    grads = tape.backward(loss)
    report = GradCheckReport(name=name, rtol=rtol)
    for t in tensors:
        if t.data.dtype != np.float64:
            logger.warning('%s: checking a %s tensor; expect noise', name, t.data.dtype)
        analytic = grads.get(t)
        if analytic is None:
            analytic = np.zeros_like(t.data)
        flat = list(np.ndindex(*t.shape))
        if max_entries is not None and len(flat) > max_entries:
            rng = rng if rng is not None else np.random.default_rng(0)
            pick = rng.choice(len(flat), size=max_entries, replace=False)
            flat = [flat[i] for i in sorted(pick)]
        for idx in flat:
            orig = t.data[idx]
            t.data[idx] = orig + h
            up = fn().item()
            t.data[idx] = orig - h
            down = fn().item()
            t.data[idx] = orig
            numeric = (up - down) / (2.0 * h)
            a = float(analytic[idx])
            report.checked += 1
            scale = max(abs(a), abs(numeric))
            if scale <= small:
                if abs(a - numeric) > small:
                    report.failures.append((t.name, idx, a, numeric))
                continue
            rel = abs(a - numeric) / scale
            report.max_rel_error = max(report.max_rel_error, rel)
            if rel > rtol:
                report.failures.append((t.name, idx, a, numeric))
    logger.debug('%s', report)
    return report
