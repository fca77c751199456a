#!python
# -*- Python -*-
"""
Synthetic paired audio-visual corpora and white-noise mixing.

Every token lasts token_ms. Its audio is a two-formant tone, its video an
elliptical mouth-like aperture whose opening grows and shrinks over the
token's frames. Token k (1-based) uses formant pair (F1[(k-1) % 4],
F2[(k-1) // 4]) and aperture (HALF_HEIGHTS[(k-1) % 4], HALF_WIDTHS[(k-1) // 4]),
so up to 16 tokens are distinct in both modalities. Consecutive tones are
crossfaded over crossfade_ms around each boundary.

Corpus directories hold NNNN.dwv (audio), NNNN.dvc (video), NNNN.txt (space
separated token indices) and manifest.csv {id, n_tokens, duration_ms}.
"""

import csv
import logging
import os
from dataclasses import dataclass

import numpy as np

from .audio import (AudioFrontendConfig, frame_count, log_mel_array, read_waveform,
                    subsampled_length, write_waveform)
from .batch import Utterance
from .conformer import stride_length
from .ctc import min_frames
from .errors import ConfigError, FormatError, UndefinedSNRError
from .visual import read_clip, write_clip


logger = logging.getLogger(__name__)

F1_HZ = (250.0, 370.0, 490.0, 610.0)
F2_HZ = (1000.0, 1350.0, 1700.0, 2050.0)
HALF_HEIGHTS = (2.0, 4.0, 6.0, 8.0)
HALF_WIDTHS = (5.0, 8.0, 11.0, 14.0)
MAX_VOCAB = len(F1_HZ) * len(F2_HZ)

SNR_GRID = (-5.0, 0.0, 5.0, 10.0, 15.0, 20.0)

MANIFEST = 'manifest.csv'


@dataclass
class SynthSpec:
    vocab_size: int = 16
    min_tokens: int = 1
    max_tokens: int = 4
    token_ms: int = 160
    sample_rate_hz: int = 16000
    fps: int = 25
    frame_size: int = 32
    crossfade_ms: float = 10.0
    amplitude: float = 0.5
    seed: int = 0

    @property
    def token_samples(self):
        return self.token_ms * self.sample_rate_hz // 1000

    @property
    def token_frames(self):
        return self.token_ms * self.fps // 1000

    def validate(self):
        if not 1 <= self.vocab_size <= MAX_VOCAB:
            raise ConfigError('synth vocab_size must lie in [1, {0}], got {1}'.format(MAX_VOCAB, self.vocab_size))
        if not 1 <= self.min_tokens <= self.max_tokens:
            raise ConfigError('need 1 <= min_tokens <= max_tokens, got {0}..{1}'.format(
                self.min_tokens, self.max_tokens))
        if (self.token_ms * self.sample_rate_hz) % 1000 or (self.token_ms * self.fps) % 1000:
            raise ConfigError('token_ms {0} is not a whole number of samples and video frames'.format(self.token_ms))
        if self.token_frames < 1:
            raise ConfigError('token_ms {0} is shorter than one video frame'.format(self.token_ms))
        if not 0 <= self.crossfade_ms < self.token_ms:
            raise ConfigError('crossfade_ms must lie in [0, token_ms)')
        if self.frame_size < 16:
            raise ConfigError('frame_size must be at least 16')
        if not 0 < self.amplitude <= 1:
            raise ConfigError('amplitude must lie in (0, 1]')
        return self


@dataclass
class NoiseSpec:
    snr_db: float = 0.0
    kind: str = 'white'
    seed: int = 0

    def validate(self):
        if self.kind != 'white':
            raise ConfigError('only white Gaussian noise is supported, got {0!r}'.format(self.kind))
        return self


def head_length(n_tokens, spec, audio_cfg=None, stage1_stride=2, video_stride=2):
    "model output frames for an n-token utterance under the front-end stride chain"
    audio_cfg = audio_cfg or AudioFrontendConfig()
    n_mel = frame_count(n_tokens * spec.token_samples, audio_cfg)
    audio = stride_length(subsampled_length(n_mel), stage1_stride)
    video = (n_tokens * spec.token_frames) // video_stride
    return min(audio, video)


def model_strides(model_cfg):
    "(audio config, stage-1 stride, video pooling stride) of a ModelConfig, or the defaults for None"
    if model_cfg is None:
        return None, 2, 2
    return model_cfg.audio, model_cfg.stage1_stride, model_cfg.visual.temporal_pool_stride


def check_ctc_validity(spec, audio_cfg=None, stage1_stride=2, video_stride=2):
    "every utterance length spec allows must fit the worst case of all-repeated tokens"
    for u in range(spec.min_tokens, spec.max_tokens + 1):
        worst = min_frames([1] * u)
        frames = head_length(u, spec, audio_cfg, stage1_stride, video_stride)
        if frames < worst:
            raise ConfigError('{0}-token utterances give {1} output frames, fewer than the {2} CTC needs; '
                              'lengthen token_ms'.format(u, frames, worst))


def token_tone(token, n_samples, sample_rate, rng):
    f1 = F1_HZ[(token - 1) % 4]
    f2 = F2_HZ[(token - 1) // 4]
    t = np.arange(n_samples) / float(sample_rate)
    p1, p2 = rng.uniform(0.0, 2.0 * np.pi, size=2)
    return (np.sin(2.0 * np.pi * f1 * t + p1) + 0.5 * np.sin(2.0 * np.pi * f2 * t + p2)) / 1.5


def _envelopes(n_tokens, seg, fade):
    "per-token gains over the whole timeline; they sum to one everywhere"
    total = n_tokens * seg
    t = np.arange(total) + 0.5
    gains = np.zeros((n_tokens, total))
    half = fade / 2.0
    for i in range(n_tokens):
        start, end = i * seg, (i + 1) * seg
        if fade == 0:
            gains[i] = (t >= start) & (t < end)
            continue
        rise = 1.0 if i == 0 else np.clip((t - (start - half)) / fade, 0.0, 1.0)
        fall = 1.0 if i == n_tokens - 1 else np.clip(((end + half) - t) / fade, 0.0, 1.0)
        gains[i] = np.minimum(rise, fall)
    return gains


def synth_audio(tokens, spec, rng):
    seg = spec.token_samples
    fade = int(round(spec.crossfade_ms * spec.sample_rate_hz / 1000.0))
    gains = _envelopes(len(tokens), seg, fade)
    level = spec.amplitude * rng.uniform(0.8, 1.0)
    out = np.zeros(len(tokens) * seg)
    for i, k in enumerate(tokens):
        out += gains[i] * token_tone(k, len(out), spec.sample_rate_hz, rng)
    return level * out


def glyph(token, size, opening):
    "one frame: an elliptical aperture scaled by opening in (0, 1]"
    a = HALF_HEIGHTS[(token - 1) % 4] * opening
    b = HALF_WIDTHS[(token - 1) // 4] * opening
    c = (size - 1) / 2.0
    y, x = np.mgrid[0:size, 0:size]
    inside = ((y - c) / max(a, 0.5)) ** 2 + ((x - c) / max(b, 0.5)) ** 2 <= 1.0
    return np.where(inside, 0.05, 0.6)


def synth_video(tokens, spec, rng):
    n = spec.token_frames
    openings = 0.7 + 0.3 * np.sin(np.pi * (np.arange(n) + 0.5) / n)
    frames = [glyph(k, spec.frame_size, o) for k in tokens for o in openings]
    frames = np.array(frames) + rng.normal(0.0, 0.02, size=(len(frames), spec.frame_size, spec.frame_size))
    return np.clip(frames, 0.0, 1.0)


def generate_utterance(spec, index):
    rng = np.random.default_rng([spec.seed, index])
    n = int(rng.integers(spec.min_tokens, spec.max_tokens + 1))
    tokens = [int(k) for k in rng.integers(1, spec.vocab_size + 1, size=n)]
    return Utterance('{0:04d}'.format(index), synth_audio(tokens, spec, rng),
                     synth_video(tokens, spec, rng), tokens, spec.sample_rate_hz)


def generate_corpus(spec, n_utterances, start=0, model_cfg=None):
    """
    n_utterances utterances with uniformly drawn token sequences. Utterance
    i depends only on (seed, i). Lengths are checked against the stride
    chain of model_cfg, the ModelConfig to be trained, when given.
    """
    spec.validate()
    check_ctc_validity(spec, *model_strides(model_cfg))
    corpus = [generate_utterance(spec, start + i) for i in range(n_utterances)]
    logger.info('generated %d utterances (vocab %d, %d-%d tokens)', n_utterances, spec.vocab_size,
                spec.min_tokens, spec.max_tokens)
    return corpus


def mix_noise(waveform, noise, rng=None):
    """
    signal + white Gaussian noise scaled so that the signal-to-noise power
    ratio is the target. noise is a NoiseSpec (its seed drives the noise
    unless rng is given) or a plain SNR in dB with an explicit rng.
    """
    if isinstance(noise, NoiseSpec):
        snr_db = noise.validate().snr_db
        rng = rng if rng is not None else np.random.default_rng(noise.seed)
    else:
        snr_db = float(noise)
    if rng is None:
        raise ValueError('a plain SNR needs an explicit rng')
    x = np.asarray(waveform, dtype=np.float64)
    p_signal = np.mean(x * x) if len(x) else 0.0
    if p_signal == 0.0:
        raise UndefinedSNRError('cannot set an SNR against a zero-power signal')
    noise = rng.standard_normal(len(x))
    p_noise = np.mean(noise * noise)
    scale = np.sqrt(p_signal / (p_noise * 10.0 ** (snr_db / 10.0)))
    return x + scale * noise


def measured_snr(signal, mixed):
    signal = np.asarray(signal, dtype=np.float64)
    noise = np.asarray(mixed, dtype=np.float64) - signal
    return 10.0 * np.log10(np.mean(signal * signal) / np.mean(noise * noise))


def noisy_corpus(utterances, noise):
    "copies of utterances with noise mixed in; utterance i uses stream (seed, i)"
    noise.validate()
    return [u.with_waveform(mix_noise(u.waveform, noise.snr_db, np.random.default_rng([noise.seed, i])))
            for i, u in enumerate(utterances)]


def token_separability(spec, audio_cfg=None, n_draws=2):
    """
    Nearest-neighbour accuracy of per-token mean log-mel vectors: references
    from one draw of every token, probes from the others.
    """
    audio_cfg = audio_cfg or AudioFrontendConfig()
    means = {}
    for draw in range(n_draws):
        rng = np.random.default_rng([spec.seed, 1 << 20, draw])
        for k in range(1, spec.vocab_size + 1):
            mel = log_mel_array(synth_audio([k], spec, rng), audio_cfg)
            means[draw, k] = mel.mean(axis=0)
    refs = np.array([means[0, k] for k in range(1, spec.vocab_size + 1)])
    hits = total = 0
    for draw in range(1, n_draws):
        for k in range(1, spec.vocab_size + 1):
            guess = 1 + int(np.argmin(np.sum((refs - means[draw, k]) ** 2, axis=1)))
            hits += guess == k
            total += 1
    return hits / float(total) if total else 1.0


def write_corpus(directory, utterances):
    if not os.path.isdir(directory):
        os.makedirs(directory)
    with open(os.path.join(directory, MANIFEST), 'w', newline='') as fp:
        out = csv.writer(fp)
        out.writerow(['id', 'n_tokens', 'duration_ms'])
        for u in utterances:
            base = os.path.join(directory, u.uid)
            write_waveform(base + '.dwv', u.waveform, u.sample_rate)
            write_clip(base + '.dvc', u.frames)
            with open(base + '.txt', 'w') as tf:
                tf.write(' '.join(str(k) for k in u.tokens) + '\n')
            out.writerow([u.uid, len(u.tokens), '{0:g}'.format(u.duration_ms)])
    logger.info('wrote %d utterances to %s', len(utterances), directory)


def read_corpus(directory):
    path = os.path.join(directory, MANIFEST)
    if not os.path.exists(path):
        raise FormatError('{0}: no {1}; not a corpus directory'.format(directory, MANIFEST))
    out = []
    with open(path, newline='') as fp:
        for row in csv.DictReader(fp):
            base = os.path.join(directory, row['id'])
            samples, rate = read_waveform(base + '.dwv')
            clip = read_clip(base + '.dvc')
            with open(base + '.txt') as tf:
                tokens = [int(k) for k in tf.read().split()]
            if len(tokens) != int(row['n_tokens']):
                raise FormatError('{0}: transcript has {1} tokens, manifest says {2}'.format(
                    base, len(tokens), row['n_tokens']))
            out.append(Utterance(row['id'], samples, clip.frames, tokens, rate))
    logger.debug('read %d utterances from %s', len(out), directory)
    return out
