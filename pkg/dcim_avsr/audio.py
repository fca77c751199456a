#!python
# -*- Python -*-
"""
Audio front-end: log-mel features, SpecAugment masking and the
convolutional subsampler that feeds the first audio stage.

Spectra come from a direct DFT (cos/sin matrices) rather than an FFT. The
one-sided power spectrum is energy-normalized so that its bins sum to the
energy of the windowed frame.
"""

import logging
import struct
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .conformer import lengths_to_mask, stride_length
from .errors import ConfigError, FormatError, InputTooShortError
from .nn import Conv2d, Linear, Module


logger = logging.getLogger(__name__)

WAVE_MAGIC = b'DWV1'
_WAVE_HEADER = struct.Struct('<4sII')


@dataclass
class AudioFrontendConfig:
    sample_rate_hz: int = 16000
    window_ms: float = 25.0
    hop_ms: float = 10.0
    dft_size: int = 512
    n_mels: int = 80
    f_min_hz: float = 0.0
    f_max_hz: float = 0.0    # 0 means Nyquist
    log_floor: float = 1e-10
    subsample_channels: int = 180
    subsample_out_dim: int = 180

    @property
    def window_samples(self):
        return int(round(self.sample_rate_hz * self.window_ms / 1000.0))

    @property
    def hop_samples(self):
        return int(round(self.sample_rate_hz * self.hop_ms / 1000.0))

    @property
    def n_bins(self):
        return self.dft_size // 2 + 1

    @property
    def top_hz(self):
        return self.f_max_hz or self.sample_rate_hz / 2.0

    def validate(self):
        if self.hop_ms > self.window_ms:
            raise ConfigError('hop_ms {0} exceeds window_ms {1}'.format(self.hop_ms, self.window_ms))
        if self.window_samples > self.dft_size:
            raise ConfigError('window of {0} samples exceeds dft_size {1}'.format(
                self.window_samples, self.dft_size))
        if self.n_mels > self.n_bins:
            raise ConfigError('n_mels {0} exceeds dft_size/2+1 = {1}'.format(self.n_mels, self.n_bins))
        if self.log_floor <= 0:
            raise ConfigError('log_floor must be positive')
        if not 0 <= self.f_min_hz < self.top_hz <= self.sample_rate_hz / 2.0:
            raise ConfigError('mel band [{0}, {1}] Hz is not inside [0, Nyquist]'.format(
                self.f_min_hz, self.top_hz))
        return self


@dataclass
class SpecAugmentConfig:
    n_freq_masks: int = 2
    max_freq_width: int = 10
    n_time_masks: int = 2
    max_time_width: int = 20

    def validate(self):
        if min(self.n_freq_masks, self.max_freq_width, self.n_time_masks, self.max_time_width) < 0:
            raise ConfigError('specaug mask counts and widths must be >= 0')
        return self


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_centers_hz(cfg):
    edges = np.linspace(hz_to_mel(cfg.f_min_hz), hz_to_mel(cfg.top_hz), cfg.n_mels + 2)
    return mel_to_hz(edges[1:-1])


_FILTERBANKS = {}
_DFT_MATRICES = {}
_WINDOWS = {}


def mel_filterbank(cfg):
    """
    (n_bins, n_mels) triangular filters, equally spaced on the HTK mel scale,
    evaluated at the exact bin frequencies.
    """
    key = (cfg.sample_rate_hz, cfg.dft_size, cfg.n_mels, cfg.f_min_hz, cfg.top_hz)
    fb = _FILTERBANKS.get(key)
    if fb is None:
        edges = mel_to_hz(np.linspace(hz_to_mel(cfg.f_min_hz), hz_to_mel(cfg.top_hz), cfg.n_mels + 2))
        freqs = np.arange(cfg.n_bins) * cfg.sample_rate_hz / float(cfg.dft_size)
        lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
        rising = (freqs[None, :] - lo) / (mid - lo)
        falling = (hi - freqs[None, :]) / (hi - mid)
        fb = np.maximum(0.0, np.minimum(rising, falling)).T
        empty = np.flatnonzero(fb.sum(axis=0) == 0)
        if len(empty):
            raise ConfigError('mel filters {0} cover no DFT bin; use fewer mels or a larger dft_size'.format(
                list(empty[:5])))
        _FILTERBANKS[key] = fb
    return fb


def hann_window(n):
    "periodic Hann window"
    w = _WINDOWS.get(n)
    if w is None:
        w = _WINDOWS[n] = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)
    return w


def _dft_matrices(n):
    mats = _DFT_MATRICES.get(n)
    if mats is None:
        k = np.arange(n // 2 + 1)[:, None]
        t = np.arange(n)[None, :]
        angle = 2.0 * np.pi * ((k * t) % n) / n
        mats = _DFT_MATRICES[n] = (np.cos(angle), np.sin(angle))
    return mats


def frame_count(n_samples, cfg):
    if n_samples < cfg.window_samples:
        return 0
    return 1 + (n_samples - cfg.window_samples) // cfg.hop_samples


def frames(waveform, cfg):
    "(n_frames, window) matrix of Hann-windowed frames"
    x = np.asarray(waveform, dtype=np.float64).reshape(-1)
    n = frame_count(len(x), cfg)
    if n < 1:
        raise InputTooShortError('waveform of {0} samples is shorter than one {1}-sample window'.format(
            len(x), cfg.window_samples))
    starts = np.arange(n) * cfg.hop_samples
    idx = starts[:, None] + np.arange(cfg.window_samples)[None, :]
    return x[idx] * hann_window(cfg.window_samples)[None, :]


def power_spectrum(framed, dft_size):
    """
    One-sided power of each row of framed (zero-padded to dft_size), scaled
    so that each row sums to the row's energy.
    """
    framed = np.asarray(framed, dtype=np.float64)
    if framed.shape[-1] < dft_size:
        framed = np.pad(framed, [(0, 0)] * (framed.ndim - 1) + [(0, dft_size - framed.shape[-1])])
    cos_m, sin_m = _dft_matrices(dft_size)
    re = framed @ cos_m.T
    im = framed @ sin_m.T
    power = (re * re + im * im) / dft_size
    power[..., 1:(dft_size + 1) // 2] *= 2.0
    return power


def log_mel_array(waveform, cfg):
    cfg.validate()
    power = power_spectrum(frames(waveform, cfg), cfg.dft_size)
    mel = power @ mel_filterbank(cfg)
    return np.log(np.maximum(mel, cfg.log_floor))


def log_mel(waveform, cfg):
    "(frames, n_mels) log-mel features of a mono waveform"
    return T.Tensor(log_mel_array(waveform, cfg))


def spec_augment(mel, cfg, rng):
    """
    Zero random frequency bands and time bands of a (frames, n_mels) feature
    matrix. Widths are drawn uniformly from [0, max width] and clamped to the
    axis extent. Returns a new matrix of the same type and shape.
    """
    is_tensor = isinstance(mel, T.Tensor)
    out = np.array(mel.data if is_tensor else mel, copy=True)
    n_frames, n_mels = out.shape
    for count, max_width, extent, axis in ((cfg.n_freq_masks, cfg.max_freq_width, n_mels, 1),
                                           (cfg.n_time_masks, cfg.max_time_width, n_frames, 0)):
        if count and max_width > extent:
            logger.debug('clamping mask width %d to axis extent %d', max_width, extent)
        for _ in range(count):
            width = min(int(rng.integers(0, max_width + 1)), extent)
            start = int(rng.integers(0, extent - width + 1))
            if axis == 1:
                out[:, start:start + width] = 0.0
            else:
                out[start:start + width, :] = 0.0
    return T.Tensor(out) if is_tensor else out


def subsampled_length(n_frames):
    return stride_length(stride_length(n_frames, 2), 2)


class ConvSubsampler(Module):
    """
    Two 3x3 stride-2 convolutions over (time, frequency), each followed by
    ReLU, then the flattened channel x frequency axis projected to out_dim.
    Time length goes L -> (L-1)//2+1 twice.
    """

    def __init__(self, n_mels, channels, out_dim, rng):
        super(ConvSubsampler, self).__init__()
        self.n_mels = n_mels
        self.conv1 = self.add_child('conv1', Conv2d(1, channels, 3, rng, stride=2, padding=1))
        self.conv2 = self.add_child('conv2', Conv2d(channels, channels, 3, rng, stride=2, padding=1))
        self.freq_out = subsampled_length(n_mels)
        self.proj = self.add_child('proj', Linear(channels * self.freq_out, out_dim, rng))

    def __call__(self, mel, lengths):
        """
        mel is (batch, frames, n_mels) with padded frames zeroed. Returns
        (features (batch, frames', out_dim), padding mask).
        """
        lengths = np.asarray(lengths)
        if mel.ndim != 3 or mel.shape[2] != self.n_mels:
            raise ConfigError('subsampler for {0} mels got input {1}'.format(self.n_mels, mel.shape))
        if lengths.min() < 4:
            raise InputTooShortError('subsampling needs at least 4 frames, got {0}'.format(int(lengths.min())))
        b = mel.shape[0]
        x = T.reshape(mel, (b, 1) + mel.shape[1:])
        for conv in (self.conv1, self.conv2):
            x = T.relu(conv(x))
            lengths = stride_length(lengths, 2)
            mask = lengths_to_mask(lengths, x.shape[2])
            x = T.masked_fill(x, mask[:, None, :, None], 0.0)
        x = T.transpose(x, (0, 2, 1, 3))
        x = T.reshape(x, x.shape[:2] + (x.shape[2] * x.shape[3],))
        return self.proj(x), mask


def write_waveform(path, samples, sample_rate):
    "16-bit PCM with a DWV1 header; samples are floats in [-1, 1]"
    pcm = np.clip(np.round(np.asarray(samples, dtype=np.float64) * 32767.0), -32768, 32767)
    with open(path, 'wb') as fp:
        fp.write(_WAVE_HEADER.pack(WAVE_MAGIC, int(sample_rate), len(pcm)))
        fp.write(pcm.astype('<i2').tobytes())


def read_waveform(path):
    "returns (float64 samples, sample_rate)"
    with open(path, 'rb') as fp:
        blob = fp.read()
    if len(blob) < _WAVE_HEADER.size:
        raise FormatError('{0}: too short for a waveform header'.format(path))
    magic, rate, count = _WAVE_HEADER.unpack_from(blob, 0)
    if magic != WAVE_MAGIC:
        raise FormatError('{0}: bad magic {1!r}'.format(path, magic))
    body = blob[_WAVE_HEADER.size:]
    if len(body) != 2 * count:
        raise FormatError('{0}: header promises {1} samples, file holds {2} bytes'.format(
            path, count, len(body)))
    return np.frombuffer(body, dtype='<i2').astype(np.float64) / 32767.0, rate
