#!python
# -*- Python -*-
"""
Connectionist Temporal Classification: loss, an exhaustive reference, the
intermediate-loss combination, greedy decoding and error rates.

Index 0 of the vocabulary is the blank. Label sequences hold indices in
[1, V-1]. All probabilities are handled as natural logs.
"""

import itertools
import logging

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError, TokenError, UndefinedRateError


logger = logging.getLogger(__name__)

BLANK = 0
NEG_INF = -np.inf


def check_labels(labels, vocab):
    labels = [int(k) for k in labels]
    for k in labels:
        if k < 1 or k >= vocab:
            raise TokenError('label {0} outside [1, {1}] (0 is the blank)'.format(k, vocab - 1))
    return labels


def min_frames(labels):
    "fewest frames that can emit labels: one per label plus a blank between repeats"
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


def _extend(labels):
    ext = np.zeros(2 * len(labels) + 1, dtype=np.int64)
    ext[1::2] = labels
    skip = np.zeros(len(ext), dtype=bool)
    if len(ext) > 2:
        skip[2:] = (ext[2:] != BLANK) & (ext[2:] != ext[:-2])
    return ext, skip


def _shift(v, n):
    return np.concatenate([np.full(n, NEG_INF), v[:-n]]) if n < len(v) else np.full(len(v), NEG_INF)


def _unshift(v, n):
    return np.concatenate([v[n:], np.full(n, NEG_INF)]) if n < len(v) else np.full(len(v), NEG_INF)


def forward_backward(logp, labels):
    """
    Log-space forward and backward variables over the blank-extended label
    sequence. alpha[t, s] includes the emission at t; beta[t, s] covers
    frames after t only, so alpha + beta is the log mass of paths through
    (t, s). Returns (alpha, beta, log P(labels | logp)).
    """
    logp = np.asarray(logp, dtype=np.float64)
    n_frames = logp.shape[0]
    ext, skip = _extend(labels)
    n_states = len(ext)
    emit = logp[:, ext]

    alpha = np.full((n_frames, n_states), NEG_INF)
    alpha[0, 0] = emit[0, 0]
    if n_states > 1:
        alpha[0, 1] = emit[0, 1]
    with np.errstate(invalid='ignore'):
        for t in range(1, n_frames):
            prev = alpha[t - 1]
            jump = np.where(skip, _shift(prev, 2), NEG_INF)
            alpha[t] = np.logaddexp(np.logaddexp(prev, _shift(prev, 1)), jump) + emit[t]

        beta = np.full((n_frames, n_states), NEG_INF)
        beta[-1, -1] = 0.0
        if n_states > 1:
            beta[-1, -2] = 0.0
        skip_from = _unshift(skip.astype(np.float64), 2) > 0
        for t in range(n_frames - 2, -1, -1):
            nxt = beta[t + 1] + emit[t + 1]
            jump = np.where(skip_from, _unshift(nxt, 2), NEG_INF)
            beta[t] = np.logaddexp(np.logaddexp(nxt, _unshift(nxt, 1)), jump)

    log_prob = alpha[-1, -1]
    if n_states > 1:
        log_prob = np.logaddexp(log_prob, alpha[-1, -2])
    return alpha, beta, float(log_prob)


def ctc_loss_and_grad(logp, labels):
    """
    -log P(labels | logp) and its gradient with respect to logp. Infeasible
    alignments (too few frames) give an infinite loss and a zero gradient.
    """
    logp = np.asarray(logp, dtype=np.float64)
    if logp.ndim != 2:
        raise ShapeError('ctc expects (frames, vocab) log-probabilities, got {0}'.format(logp.shape))
    if logp.shape[0] < 1:
        raise ShapeError('ctc needs at least one frame')
    labels = check_labels(labels, logp.shape[1])
    grad = np.zeros_like(logp)
    if logp.shape[0] < min_frames(labels):
        return np.inf, grad
    alpha, beta, log_prob = forward_backward(logp, labels)
    if not np.isfinite(log_prob):
        return np.inf, grad
    ext, _ = _extend(labels)
    occupancy = np.exp(alpha + beta - log_prob)
    np.add.at(grad, (slice(None), ext), -occupancy)
    return -log_prob, grad


def ctc_loss(logp, labels):
    "CTC loss of one utterance; logp is a (frames, vocab) Tensor"
    loss, grad = ctc_loss_and_grad(logp.data, labels)
    out = np.asarray(loss, dtype=logp.data.dtype)
    grad = grad.astype(logp.data.dtype)
    return T.record_op(out, (logp,), lambda g: (g * grad,))


def ctc_loss_batch(logp, lengths, targets):
    """
    Mean CTC loss over a batch. logp is (batch, frames, vocab); lengths gives
    each utterance's valid frame count and targets its label list.
    """
    b = logp.shape[0]
    if len(lengths) != b or len(targets) != b:
        raise ShapeError('batch of {0} with {1} lengths and {2} targets'.format(b, len(lengths), len(targets)))
    total = 0.0
    grad = np.zeros(logp.shape, dtype=np.float64)
    for i in range(b):
        n = int(lengths[i])
        loss, g = ctc_loss_and_grad(logp.data[i, :n], targets[i])
        total += loss
        grad[i, :n] = g
    grad = (grad / b).astype(logp.data.dtype)
    out = np.asarray(total / b, dtype=logp.data.dtype)
    return T.record_op(out, (logp,), lambda g: (g * grad,))


_PATH_CACHE = {}


def collapse(path):
    "merge repeats, then drop blanks"
    out = []
    prev = None
    for k in path:
        k = int(k)
        if k != prev and k != BLANK:
            out.append(k)
        prev = k
    return out


def _paths(n_frames, vocab):
    key = (n_frames, vocab)
    if key not in _PATH_CACHE:
        paths = np.array(list(itertools.product(range(vocab), repeat=n_frames)), dtype=np.int64)
        groups = {}
        for i, p in enumerate(paths):
            groups.setdefault(tuple(collapse(p)), []).append(i)
        groups = dict((k, np.array(v)) for k, v in groups.items())
        _PATH_CACHE[key] = (paths, groups)
    return _PATH_CACHE[key]


def ctc_brute_force(logp, labels):
    """
    Reference CTC loss by enumerating all vocab**frames labelings and
    summing those that collapse to labels. Only for tiny inputs.
    """
    logp = np.asarray(logp, dtype=np.float64)
    n_frames, vocab = logp.shape
    labels = check_labels(labels, vocab)
    paths, groups = _paths(n_frames, vocab)
    idx = groups.get(tuple(labels))
    if idx is None:
        return np.inf
    scores = logp[np.arange(n_frames)[None, :], paths[idx]].sum(axis=1)
    top = scores.max()
    return -(top + np.log(np.sum(np.exp(scores - top))))


def inter_ctc_combine(final_loss, tap_losses, lam=0.3):
    "(1 - lam) * final + lam * mean(taps)"
    if not 0.0 <= lam <= 1.0:
        raise ConfigError('inter-CTC lambda must lie in [0, 1], got {0!r}'.format(lam))
    tap_losses = list(tap_losses)
    if lam == 0.0:
        return final_loss
    if not tap_losses:
        raise ConfigError('inter-CTC lambda {0} > 0 but no intermediate taps are wired'.format(lam))
    mean_tap = tap_losses[0]
    for t in tap_losses[1:]:
        mean_tap = mean_tap + t
    if len(tap_losses) > 1:
        mean_tap = mean_tap / len(tap_losses)
    if lam == 1.0:
        return mean_tap
    return (1.0 - lam) * final_loss + lam * mean_tap


def greedy_decode(logp, length=None):
    "per-frame argmax (ties to the lower index), repeats merged, blanks dropped"
    arr = logp.data if isinstance(logp, T.Tensor) else np.asarray(logp)
    if length is not None:
        arr = arr[:int(length)]
    if arr.shape[0] == 0:
        return []
    return collapse(np.argmax(arr, axis=-1))


def edit_distance(a, b):
    "Levenshtein distance with unit costs"
    a, b = list(a), list(b)
    row = np.arange(len(b) + 1)
    for i, x in enumerate(a, 1):
        prev = row.copy()
        row[0] = i
        for j, y in enumerate(b, 1):
            row[j] = min(prev[j] + 1, row[j - 1] + 1, prev[j - 1] + (x != y))
    return int(row[-1])


def wer(refs, hyps):
    "total edits over total reference tokens"
    refs, hyps = list(refs), list(hyps)
    if len(refs) != len(hyps):
        raise ValueError('{0} references but {1} hypotheses'.format(len(refs), len(hyps)))
    n_ref = sum(len(r) for r in refs)
    if n_ref == 0:
        raise UndefinedRateError('error rate is undefined over an empty reference corpus')
    edits = sum(edit_distance(r, h) for r, h in zip(refs, hyps))
    return edits / float(n_ref)
