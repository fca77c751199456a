#!python
# -*- Python -*-
"""
Adam with a warmup schedule, stage plans and the training loop.

Training proceeds in three stages: an ASR model and a VSR model are trained
on their own, then an AVSR model is initialized from both by parameter name
(its adapters start at zero) and fine-tuned with the intermediate CTC
objective. A cold-start plan trains the AVSR model directly instead.
"""

import csv
import fnmatch
import logging
import os
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint
from . import tensor as T
from .audio import SpecAugmentConfig
from .batch import batches
from .ctc import ctc_loss_batch, greedy_decode, inter_ctc_combine, wer
from .errors import ConfigError, DivergenceError, IncompatibleCheckpointError


logger = logging.getLogger(__name__)

STAGES = ('asr', 'vsr', 'avsr')
METRICS_HEADER = ('epoch', 'loss', 'train_wer', 'eval_wer', 'lr')


@dataclass
class TrainConfig:
    base_scale: float = 2.0
    warmup_steps: int = 1000
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    clip_norm: float = 5.0
    precision: str = 'float32'
    specaug: bool = True
    augment_video: bool = True
    eval_batch_size: int = 16
    seed: int = 0

    @classmethod
    def preset(cls, name):
        if name == 'paper':
            return cls(base_scale=1.0, warmup_steps=10000)
        if name in ('desk', 'toy'):
            return cls()
        raise ConfigError('unknown training preset {0!r}'.format(name))

    def validate(self):
        if self.warmup_steps < 1:
            raise ConfigError('warmup_steps must be >= 1')
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError('Adam betas must lie in [0, 1)')
        if self.eps <= 0 or self.base_scale <= 0:
            raise ConfigError('eps and base_scale must be positive')
        if self.clip_norm < 0:
            raise ConfigError('clip_norm must be >= 0 (0 disables clipping)')
        if self.precision not in T.PRECISIONS:
            raise ConfigError('precision must be one of {0}'.format(sorted(T.PRECISIONS)))
        if self.eval_batch_size < 1:
            raise ConfigError('eval_batch_size must be >= 1')
        return self


def lr(step, dim, warmup_steps, base_scale=1.0):
    "inverse square root decay after a linear warmup; peaks at step == warmup_steps"
    if step < 1:
        raise ValueError('learning rate schedule starts at step 1, got {0}'.format(step))
    return base_scale * dim ** -0.5 * min(step ** -0.5, step * warmup_steps ** -1.5)


class WarmupSchedule(object):
    def __init__(self, dim, warmup_steps, base_scale=1.0):
        self.dim = dim
        self.warmup_steps = warmup_steps
        self.base_scale = base_scale

    def __call__(self, step):
        return lr(step, self.dim, self.warmup_steps, self.base_scale)


def model_dim(model):
    "width of the layer feeding the model's output head"
    if model.variant == 'vsr':
        return model.cfg.audio_stage_dims[1]
    return model.cfg.audio_stage_dims[2]


class Adam(object):
    """
    Bias-corrected Adam over named parameters. A step whose gradients are
    not all finite is rejected: nothing moves and the step counter stays.
    """

    def __init__(self, params, cfg, schedule, frozen=()):
        self.cfg = cfg
        self.schedule = schedule
        frozen = set(frozen)
        self.params = OrderedDict((n, p) for n, p in params.items() if n not in frozen)
        self.m = OrderedDict((n, np.zeros_like(p.data)) for n, p in self.params.items())
        self.v = OrderedDict((n, np.zeros_like(p.data)) for n, p in self.params.items())
        self.step_count = 0
        self.rejected = 0
        self.last_lr = 0.0

    def grad_norm(self, grads):
        return float(np.sqrt(sum(float(np.sum(np.square(g))) for g in grads.values())))

    def step(self, grads=None):
        """
        Apply one update. grads maps names to arrays; by default each
        parameter's .grad is used (None counts as zero). Returns False when
        the step was rejected.
        """
        if grads is None:
            grads = OrderedDict((n, p.grad if p.grad is not None else np.zeros_like(p.data))
                                for n, p in self.params.items())
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                self.rejected += 1
                logger.warning('non-finite gradient in %s; step %d rejected', name, self.step_count + 1)
                return False
        norm = self.grad_norm(grads)
        scale = 1.0
        if self.cfg.clip_norm and norm > self.cfg.clip_norm:
            scale = self.cfg.clip_norm / norm
        self.step_count += 1
        t = self.step_count
        rate = self.last_lr = self.schedule(t)
        b1, b2 = self.cfg.beta1, self.cfg.beta2
        c1 = 1.0 - b1 ** t
        c2 = 1.0 - b2 ** t
        for name, p in self.params.items():
            g = grads.get(name)
            if g is None:
                continue
            g = g * scale
            m = self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
            v = self.v[name] = b2 * self.v[name] + (1.0 - b2) * g * g
            p.data = (p.data - rate * (m / c1) / (np.sqrt(v / c2) + self.cfg.eps)).astype(p.data.dtype)
        logger.debug('step %d lr %.3g grad norm %.3g', t, rate, norm)
        return True

    def save(self, path, config_text):
        arrays = OrderedDict()
        for name in self.params:
            arrays['m.' + name] = self.m[name]
            arrays['v.' + name] = self.v[name]
        checkpoint.write_arrays(path, arrays, 'adam', config_text,
                                meta={'step': self.step_count, 'rejected': self.rejected})

    def load(self, path):
        data = checkpoint.read_arrays(path)
        if data.variant != 'adam':
            raise IncompatibleCheckpointError('{0} holds a {1} model, not optimizer state'.format(
                path, data.variant))
        for name in self.params:
            self.m[name] = data.arrays['m.' + name].astype(self.m[name].dtype)
            self.v[name] = data.arrays['v.' + name].astype(self.v[name].dtype)
        self.step_count = int(data.meta.get('step', 0))
        self.rejected = int(data.meta.get('rejected', 0))


def frozen_names(model, patterns):
    "parameter names matching any of the fnmatch patterns"
    names = model.named_parameters()
    return [n for n in names if any(fnmatch.fnmatchcase(n, pat) for pat in patterns)]


@dataclass
class StagePlan:
    stage: str = 'asr'
    epochs: int = 300
    batch_size: int = 8
    init_asr: str = None
    init_vsr: str = None
    pretrained: bool = True
    freeze: tuple = ()

    SCHEDULES = {
        'desk': {'asr': (300, 8), 'vsr': (100, 8), 'avsr': (100, 8), 'avsr_direct': (100, 8)},
        'paper': {'asr': (100, 64), 'vsr': (30, 32), 'avsr': (20, 32), 'avsr_direct': (80, 32)},
    }

    @classmethod
    def preset(cls, name, schedule='desk', **kw):
        """
        name is asr, vsr, avsr (warm-started fine-tuning) or avsr_direct
        (cold start).
        """
        try:
            epochs, batch_size = cls.SCHEDULES[schedule][name]
        except KeyError:
            raise ConfigError('no {0!r} plan in schedule {1!r}'.format(name, schedule))
        stage = 'avsr' if name == 'avsr_direct' else name
        plan = cls(stage=stage, epochs=epochs, batch_size=batch_size, pretrained=name != 'avsr_direct')
        for k, v in kw.items():
            setattr(plan, k, v)
        return plan

    def validate(self):
        if self.stage not in STAGES:
            raise ConfigError('stage must be one of {0}, got {1!r}'.format(STAGES, self.stage))
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError('epochs and batch_size must be >= 1')
        if self.stage == 'avsr' and self.pretrained and not (self.init_asr and self.init_vsr):
            raise ConfigError('a pre-trained avsr stage needs both an asr and a vsr checkpoint '
                              '(or pretrained = false for a cold start)')
        return self

    def init_paths(self):
        if self.stage != 'avsr' or not self.pretrained:
            return []
        return [self.init_asr, self.init_vsr]


@dataclass
class EpochMetrics:
    epoch: int
    loss: float
    train_wer: float
    eval_wer: float
    lr: float

    def row(self):
        return [self.epoch, '{0:.6f}'.format(self.loss), '{0:.4f}'.format(self.train_wer),
                '{0:.4f}'.format(self.eval_wer), '{0:.6g}'.format(self.lr)]


@dataclass
class StageResult:
    stage: str
    history: list = field(default_factory=list)
    checkpoint: str = None
    metrics: str = None
    initialized: set = field(default_factory=set)

    @property
    def losses(self):
        return [m.loss for m in self.history]


def batch_loss(model, batch):
    "CTC for asr and vsr; final CTC blended with the intermediate losses for avsr"
    out = model(batch)
    final = ctc_loss_batch(out.logp, out.lengths, batch.targets)
    if model.variant != 'avsr':
        return final, out
    lam = model.cfg.inter_ctc_lambda
    taps = [ctc_loss_batch(tap, out.tap_lengths, batch.targets) for tap in out.taps] if lam > 0 else []
    return inter_ctc_combine(final, taps, lam), out


@dataclass
class Decoded:
    ids: list
    refs: list
    hyps: list

    @property
    def wer(self):
        return wer(self.refs, self.hyps)


def decode(model, corpus, batch_size=16):
    "greedy transcripts of every utterance, in corpus order"
    model.eval()
    ids, refs, hyps = [], [], []
    for batch in batches(corpus, batch_size, model.cfg.audio):
        out = model(batch)
        for i, uid in enumerate(batch.ids):
            ids.append(uid)
            refs.append(batch.targets[i])
            hyps.append(greedy_decode(out.logp.data[i], out.lengths[i]))
    return Decoded(ids, refs, hyps)


def evaluate(model, corpus, batch_size=16):
    return decode(model, corpus, batch_size).wer


def _augment_kwargs(model, tcfg, specaug):
    kw = {}
    if tcfg.specaug and model.variant in ('asr', 'avsr'):
        kw['specaug'] = specaug or SpecAugmentConfig()
    if tcfg.augment_video and model.variant in ('vsr', 'avsr'):
        kw['augment_video'] = True
    return kw


def run_stage(model, plan, train_corpus, eval_corpus=None, tcfg=None, run_dir=None, specaug=None):
    """
    Train model for plan.epochs epochs. Each epoch appends a row to
    <run_dir>/metrics_<stage>.csv and rewrites <run_dir>/<stage>.ckpt, so a
    divergence leaves the last good checkpoint in place.
    """
    tcfg = (tcfg or TrainConfig()).validate()
    plan.validate()
    if plan.stage != model.variant:
        raise ConfigError('plan is for a {0} stage but the model is {1}'.format(plan.stage, model.variant))
    if not train_corpus:
        raise ConfigError('cannot train on an empty corpus')
    result = StageResult(plan.stage)
    if plan.stage == 'avsr' and plan.pretrained:
        result.initialized = checkpoint.warm_start(model, *plan.init_paths())
    model.astype(T.PRECISIONS[tcfg.precision])
    model.reseed(tcfg.seed)
    frozen = frozen_names(model, plan.freeze)
    if frozen:
        logger.info('freezing %d parameters', len(frozen))
    opt = Adam(model.named_parameters(), tcfg, WarmupSchedule(model_dim(model), tcfg.warmup_steps, tcfg.base_scale),
               frozen=frozen)
    rng = np.random.default_rng([tcfg.seed, 11])
    augment = _augment_kwargs(model, tcfg, specaug)
    metrics_fp = None
    if run_dir is not None:
        if not os.path.isdir(run_dir):
            os.makedirs(run_dir)
        result.checkpoint = os.path.join(run_dir, '{0}.ckpt'.format(plan.stage))
        result.metrics = os.path.join(run_dir, 'metrics_{0}.csv'.format(plan.stage))
        metrics_fp = open(result.metrics, 'w', newline='')
        writer = csv.writer(metrics_fp)
        writer.writerow(METRICS_HEADER)
        metrics_fp.flush()
    try:
        with T.precision(tcfg.precision):
            for epoch in range(1, plan.epochs + 1):
                model.train()
                total, n = 0.0, 0
                for batch in batches(train_corpus, plan.batch_size, model.cfg.audio, rng, shuffle=True, **augment):
                    model.zero_grad()
                    with T.Tape() as tape:
                        loss, _ = batch_loss(model, batch)
                    value = loss.item()
                    if not np.isfinite(value):
                        logger.error('%s stage diverged at epoch %d (loss %r)', plan.stage, epoch, value)
                        raise DivergenceError('non-finite loss {0!r} in epoch {1}; last good checkpoint: {2}'.format(
                            value, epoch, result.checkpoint))
                    tape.backward(loss)
                    opt.step()
                    total += value * len(batch)
                    n += len(batch)
                train_wer = evaluate(model, train_corpus, tcfg.eval_batch_size)
                eval_wer = evaluate(model, eval_corpus, tcfg.eval_batch_size) if eval_corpus else float('nan')
                m = EpochMetrics(epoch, total / n, train_wer, eval_wer, opt.last_lr)
                result.history.append(m)
                logger.info('%s epoch %d/%d loss %.4f train wer %.4f eval wer %.4f lr %.3g', plan.stage, epoch,
                            plan.epochs, m.loss, m.train_wer, m.eval_wer, m.lr)
                if metrics_fp is not None:
                    writer.writerow(m.row())
                    metrics_fp.flush()
                    checkpoint.save(model, result.checkpoint, meta={'epoch': epoch, 'stage': plan.stage})
    finally:
        if metrics_fp is not None:
            metrics_fp.close()
        model.eval()
    return result
