#!python
# -*- Python -*-
"""
Self-checks that need no trained model: gradient checks, the CTC oracle
grid, the audio/visual rate alignment audit, warm-start no-regression,
structural mode checks and checkpoint round-trips. Everything runs at toy
dims in float64.
"""

import logging
import os
import shutil
import tempfile
import time
from dataclasses import dataclass

import numpy as np

from . import checkpoint
from . import tensor as T
from .audio import subsampled_length
from .batch import collate
from .conformer import ConformerBlock, ConformerBlockConfig, lengths_to_mask, stride_length
from .ctc import ctc_brute_force, ctc_loss, ctc_loss_and_grad, min_frames
from .dcim import DCIMLayer, DCIMMode
from .gradcheck import check_gradients
from .model import ModelConfig, build
from .synth import SynthSpec, generate_corpus


logger = logging.getLogger(__name__)

DROPOUT_SEED = 5


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ''
    seconds: float = 0.0

    def __str__(self):
        return '{0:<28} {1:<4} {2} ({3:.1f}s)'.format(self.name, 'ok' if self.passed else 'FAIL',
                                                     self.detail, self.seconds)


def _leaf(rng, shape, name, positive=False):
    data = rng.standard_normal(shape)
    if positive:
        data = np.abs(data) + 0.5
    return T.Tensor(data, requires_grad=True, name=name)


def _weighted(out, w):
    return T.sum(T.mul(out, T.Tensor(w)))


def primitive_cases(rng):
    "(name, fn, leaves) triples covering every differentiable primitive"
    a = _leaf(rng, (3, 4), 'a')
    b = _leaf(rng, (4,), 'b')
    p = _leaf(rng, (3, 4), 'p', positive=True)
    m = _leaf(rng, (4, 5), 'm')
    g = _leaf(rng, (4,), 'gain')
    x3 = _leaf(rng, (2, 7, 3), 'x')
    k = _leaf(rng, (3, 3), 'kernel')
    img = _leaf(rng, (1, 2, 6, 6), 'img')
    w2 = _leaf(rng, (3, 2, 3, 3), 'w2')
    vol = _leaf(rng, (1, 1, 3, 5, 5), 'vol')
    w3 = _leaf(rng, (2, 1, 3, 3, 3), 'w3')
    mask = np.array([[False, True, False, False]] * 3)
    # keep relu inputs clear of the kink at zero
    r = T.Tensor(np.where(a.data >= 0, a.data + 0.1, a.data - 0.1), requires_grad=True, name='r')

    cases = [
        ('add/broadcast', lambda: T.add(a, b), [a, b]),
        ('sub', lambda: T.sub(a, p), [a, p]),
        ('mul/broadcast', lambda: T.mul(a, b), [a, b]),
        ('div', lambda: T.div(a, p), [a, p]),
        ('exp', lambda: T.exp(a), [a]),
        ('log', lambda: T.log(p), [p]),
        ('sigmoid', lambda: T.sigmoid(a), [a]),
        ('swish', lambda: T.swish(a), [a]),
        ('relu', lambda: T.relu(r), [r]),
        ('dropout', lambda: T.dropout(a, 0.5, True, np.random.default_rng(DROPOUT_SEED)), [a]),
        ('glu', lambda: T.glu(a, axis=-1), [a]),
        ('matmul', lambda: T.matmul(a, m), [a, m]),
        ('linear', lambda: T.linear(a, m, T.Tensor(np.ones(5))), [a, m]),
        ('softmax', lambda: T.softmax(a, axis=-1), [a]),
        ('log_softmax', lambda: T.log_softmax(a, axis=-1), [a]),
        ('layernorm', lambda: T.layernorm(a, g, b), [a, g, b]),
        ('mean', lambda: T.mean(a, axis=0), [a]),
        ('transpose', lambda: T.transpose(T.mul(a, a), (1, 0)), [a]),
        ('reshape', lambda: T.reshape(T.exp(a), (2, 6)), [a]),
        ('concat', lambda: T.concat([a, p], axis=1), [a, p]),
        ('getitem', lambda: T.getitem(a, (slice(None), [0, 2, 2])), [a]),
        ('pad', lambda: T.pad(a, ((1, 0), (0, 2))), [a]),
        ('masked_fill', lambda: T.masked_fill(T.exp(a), mask, 0.0), [a]),
        ('conv1d_depthwise', lambda: T.conv1d_depthwise(x3, k, stride=1), [x3, k]),
        ('conv1d_depthwise/stride2', lambda: T.conv1d_depthwise(x3, k, stride=2), [x3, k]),
        ('conv2d', lambda: T.conv2d(img, w2, stride=(2, 2), padding=(1, 1)), [img, w2]),
        ('conv3d', lambda: T.conv3d(vol, w3, padding=(1, 1, 1)), [vol, w3]),
    ]
    out = []
    for name, fn, leaves in cases:
        w = rng.standard_normal(fn().shape)
        out.append((name, lambda fn=fn, w=w: _weighted(fn(), w), leaves))
    return out


def _small_block_config(**kw):
    return ConformerBlockConfig(dim=8, n_heads=2, conv_kernel=3, ff_expansion=2, **kw)


def _randomize(module, rng, scale=0.3):
    "give zero-initialized parameters random values so their gradients are exercised"
    for p in module.parameters():
        if not np.any(p.data):
            p.assign(scale * rng.standard_normal(p.shape))


def gradient_checks(seed=0):
    rng = np.random.default_rng(seed)
    reports = []
    for name, fn, leaves in primitive_cases(rng):
        reports.append(check_gradients(fn, leaves, name=name))

    mask = lengths_to_mask(np.array([5, 3]), 5)
    for kind in ('standard_relpos', 'grouped'):
        cfg = _small_block_config(attention_kind=kind, group_size=2)
        block = ConformerBlock(cfg, np.random.default_rng(seed + 1))
        x = _leaf(rng, (2, 5, 8), 'x')
        w = rng.standard_normal((2, 5, 8))
        params = [block.child('attn').child('query').weight, block.child('conv').child('depthwise').weight]
        reports.append(check_gradients(lambda: _weighted(block(x, mask)[0], w), [x] + params,
                                       name='conformer_block/' + kind, max_entries=12, rng=rng))

    blocks = [ConformerBlock(_small_block_config(), np.random.default_rng(seed + i)) for i in (2, 3)]
    layer = DCIMLayer(8, 4, DCIMMode(), 1, 2, np.random.default_rng(seed + 4))
    _randomize(layer, rng)
    x_a = _leaf(rng, (2, 5, 8), 'x_a')
    x_v = _leaf(rng, (2, 5, 8), 'x_v')
    wa, wv, wt = (rng.standard_normal((2, 5, 8)) for _ in range(3))

    def dcim_loss():
        y_a, y_v, taps = layer(blocks[0], blocks[1], x_a, x_v, mask)
        return T.add(T.add(_weighted(y_a, wa), _weighted(y_v, wv)), _weighted(taps['audio'], wt))
    adapter_params = [layer.adapter('attn', 'cross').l1.weight, layer.adapter('conv', 'self').l3.weight]
    reports.append(check_gradients(dcim_loss, [x_a, x_v] + adapter_params, name='dcim_layer',
                                   max_entries=12, rng=rng))

    logits = _leaf(rng, (6, 4), 'logits')
    reports.append(check_gradients(lambda: ctc_loss(T.log_softmax(logits, axis=-1), [1, 2, 2]),
                                   [logits], name='ctc'))
    return reports


def ctc_oracle_grid(n_seeds=50, tol=1e-9, max_frames=6, max_labels=3, vocabs=(2, 3, 4)):
    """
    DP loss against exhaustive enumeration. Returns (cells checked, worst
    absolute difference, failing cells).
    """
    checked = 0
    worst = 0.0
    failures = []
    for n_frames in range(1, max_frames + 1):
        for n_labels in range(0, max_labels + 1):
            for vocab in vocabs:
                for seed in range(n_seeds):
                    rng = np.random.default_rng([n_frames, n_labels, vocab, seed])
                    z = rng.standard_normal((n_frames, vocab))
                    logp = z - np.log(np.sum(np.exp(z), axis=1, keepdims=True))
                    labels = [int(k) for k in rng.integers(1, vocab, size=n_labels)]
                    dp, _ = ctc_loss_and_grad(logp, labels)
                    ref = ctc_brute_force(logp, labels)
                    checked += 1
                    if np.isinf(dp) or np.isinf(ref):
                        ok = np.isinf(dp) and np.isinf(ref)
                        diff = 0.0 if ok else np.inf
                    else:
                        diff = abs(dp - ref)
                        ok = diff <= tol
                    worst = max(worst, diff)
                    if not ok:
                        failures.append((n_frames, labels, vocab, seed, dp, ref))
    return checked, worst, failures


def rate_alignment_audit(cfg=None, spec=None, n_utterances=24):
    """
    For synthetic utterances: audio and visual lengths at DCIM entry differ
    by at most one frame, and the head is long enough for CTC. Returns the
    offending utterance ids.
    """
    cfg = cfg or ModelConfig.preset('toy')
    spec = spec or SynthSpec(max_tokens=8, seed=1)
    bad = []
    for u in generate_corpus(spec, n_utterances, model_cfg=cfg):
        la = stride_length(subsampled_length(u.mel(cfg.audio).shape[0]), cfg.stage1_stride)
        lv = len(u.frames) // cfg.visual.temporal_pool_stride
        if abs(la - lv) > 1 or min(la, lv) < min_frames(u.tokens):
            bad.append((u.uid, la, lv, len(u.tokens)))
    return bad


def _toy_batch(cfg, n=2, seed=3):
    spec = SynthSpec(vocab_size=cfg.vocab - 1, max_tokens=3, seed=seed)
    return collate(generate_corpus(spec, n, model_cfg=cfg), cfg.audio)


def warm_start_no_regression(workdir, seed=0):
    "max |AVSR logp - ASR logp| after a warm start from fresh ASR and VSR checkpoints (must be 0)"
    cfg = ModelConfig.preset('toy')
    asr = checkpoint.quantize(build(cfg, 'asr', seed=seed))
    vsr = checkpoint.quantize(build(cfg, 'vsr', seed=seed + 1))
    asr_path = os.path.join(workdir, 'asr.ckpt')
    vsr_path = os.path.join(workdir, 'vsr.ckpt')
    checkpoint.save(asr, asr_path)
    checkpoint.save(vsr, vsr_path)
    avsr = build(cfg, 'avsr', seed=seed + 2)
    checkpoint.warm_start(avsr, asr_path, vsr_path)
    batch = _toy_batch(cfg)
    return float(np.max(np.abs(avsr(batch).logp.data - asr(batch).logp.data)))


def checkpoint_round_trip(workdir, seed=0):
    "max |difference| of forward outputs across save and load, per variant (must be 0)"
    cfg = ModelConfig.preset('toy')
    batch = _toy_batch(cfg)
    out = {}
    for variant in ('asr', 'vsr', 'avsr'):
        model = checkpoint.quantize(build(cfg, variant, seed=seed))
        _randomize(model, np.random.default_rng(seed))
        checkpoint.quantize(model)
        path = os.path.join(workdir, variant + '.roundtrip.ckpt')
        checkpoint.save(model, path)
        again = checkpoint.load(path)
        out[variant] = float(np.max(np.abs(model(batch).logp.data - again(batch).logp.data)))
    return out


def structural_mode_checks(seed=0):
    """
    v_to_a: the visual stream ignores audio. a_to_v: the audio stream
    ignores video. No purification and no completion: neither stream sees
    the other. Returns the largest observed leak for each case.
    """
    rng = np.random.default_rng(seed)
    mask = lengths_to_mask(np.array([6, 4]), 6)
    x_a = T.Tensor(rng.standard_normal((2, 6, 8)))
    x_v = T.Tensor(rng.standard_normal((2, 6, 8)))
    d_a = T.Tensor(x_a.data + rng.standard_normal(x_a.shape))
    d_v = T.Tensor(x_v.data + rng.standard_normal(x_v.shape))
    blocks = [ConformerBlock(_small_block_config(), np.random.default_rng(seed + i)) for i in (1, 2)]
    leaks = {}
    # (label, mode, streams that must not see their partner)
    cases = (('v_to_a', DCIMMode(direction='v_to_a'), ('visual',)),
             ('a_to_v', DCIMMode(direction='a_to_v'), ('audio',)),
             ('decoupled', DCIMMode(purification=False, completion=False), ('audio', 'visual')))
    for label, mode, isolated in cases:
        layer = DCIMLayer(8, 4, mode, 1, 2, np.random.default_rng(seed + 3))
        _randomize(layer, rng)
        a0, v0, _ = layer(blocks[0], blocks[1], x_a, x_v, mask)
        leak = 0.0
        if 'visual' in isolated:
            _, v1, _ = layer(blocks[0], blocks[1], d_a, x_v, mask)
            leak = max(leak, float(np.max(np.abs(v0.data - v1.data))))
        if 'audio' in isolated:
            a1, _, _ = layer(blocks[0], blocks[1], x_a, d_v, mask)
            leak = max(leak, float(np.max(np.abs(a0.data - a1.data))))
        leaks[label] = leak
    return leaks


def _timed(name, fn):
    start = time.time()
    try:
        passed, detail = fn()
    except Exception as e:
        logger.error('check %s raised', name, exc_info=True)
        passed, detail = False, '{0}: {1}'.format(type(e).__name__, e)
    result = CheckResult(name, passed, detail, time.time() - start)
    logger.info('%s', result)
    return result


def run_all(seed=0, n_seeds=50, workdir=None):
    "run every check; returns a list of CheckResult"
    own_dir = workdir is None
    workdir = workdir or tempfile.mkdtemp(prefix='dcim-verify-')
    results = []
    try:
        with T.precision('float64'):
            def grads():
                reports = gradient_checks(seed)
                bad = [str(r) for r in reports if not r.passed]
                worst = max(r.max_rel_error for r in reports)
                return not bad, '{0} checks, max rel err {1:.2e}{2}'.format(
                    len(reports), worst, '; ' + '; '.join(bad) if bad else '')
            results.append(_timed('gradient checks', grads))

            def oracle():
                checked, worst, failures = ctc_oracle_grid(n_seeds)
                return not failures, '{0} cells, max |diff| {1:.1e}'.format(checked, worst)
            results.append(_timed('ctc oracle grid', oracle))

            def alignment():
                bad = rate_alignment_audit()
                return not bad, 'misaligned: {0}'.format(bad) if bad else 'all utterances within one frame'
            results.append(_timed('rate alignment audit', alignment))

            def warm():
                diff = warm_start_no_regression(workdir, seed)
                return diff == 0.0, 'max |avsr - asr| = {0:.3g}'.format(diff)
            results.append(_timed('warm-start no-regression', warm))

            def modes():
                leaks = structural_mode_checks(seed)
                return all(v <= 1e-12 for v in leaks.values()), ', '.join(
                    '{0} leak {1:.1e}'.format(k, v) for k, v in sorted(leaks.items()))
            results.append(_timed('structural modes', modes))

            def round_trip():
                diffs = checkpoint_round_trip(workdir, seed)
                return all(v == 0.0 for v in diffs.values()), ', '.join(
                    '{0} {1:.1e}'.format(k, v) for k, v in diffs.items())
            results.append(_timed('checkpoint round-trip', round_trip))
    finally:
        if own_dir:
            shutil.rmtree(workdir, ignore_errors=True)
    return results
