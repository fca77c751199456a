#!python
# -*- Python -*-
"""
Utterances and padded mini-batches.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .audio import log_mel_array, spec_augment
from .visual import augment_clip


logger = logging.getLogger(__name__)


@dataclass
class Utterance:
    uid: str
    waveform: np.ndarray
    frames: np.ndarray          # (T_v, H, W) grayscale in [0, 1]
    tokens: list
    sample_rate: int = 16000
    _mel_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def mel(self, audio_cfg):
        key = (audio_cfg.sample_rate_hz, audio_cfg.window_ms, audio_cfg.hop_ms, audio_cfg.dft_size,
               audio_cfg.n_mels, audio_cfg.f_min_hz, audio_cfg.f_max_hz, audio_cfg.log_floor)
        mel = self._mel_cache.get(key)
        if mel is None:
            mel = self._mel_cache[key] = log_mel_array(self.waveform, audio_cfg)
        return mel

    @property
    def duration_ms(self):
        return 1000.0 * len(self.waveform) / self.sample_rate

    def with_waveform(self, waveform):
        return Utterance(self.uid, waveform, self.frames, list(self.tokens), self.sample_rate)


@dataclass
class Batch:
    ids: list
    mel: np.ndarray             # (B, T_mel, n_mels), zero past each length
    mel_lengths: np.ndarray
    video: np.ndarray           # (B, T_v, H, W), zero past each length
    video_lengths: np.ndarray
    targets: list

    def __len__(self):
        return len(self.ids)


def _pad_stack(arrays):
    lengths = np.array([a.shape[0] for a in arrays], dtype=np.int64)
    out = np.zeros((len(arrays), int(lengths.max())) + arrays[0].shape[1:], dtype=np.float64)
    for i, a in enumerate(arrays):
        out[i, :len(a)] = a
    return out, lengths


def collate(utterances, audio_cfg, specaug=None, rng=None, augment_video=False):
    """
    Featurize and pad a list of utterances. specaug (a SpecAugmentConfig)
    and augment_video apply train-time augmentation drawn from rng.
    """
    if not utterances:
        raise ValueError('cannot collate an empty list of utterances')
    mels = []
    clips = []
    for u in utterances:
        mel = u.mel(audio_cfg)
        if specaug is not None:
            mel = spec_augment(mel, specaug, rng)
        mels.append(mel)
        frames = u.frames
        if augment_video:
            frames = augment_clip(frames, rng)
        clips.append(frames)
    mel, mel_lengths = _pad_stack(mels)
    video, video_lengths = _pad_stack(clips)
    logger.debug('batch of %d: mel %s video %s', len(utterances), mel.shape, video.shape)
    return Batch([u.uid for u in utterances], mel, mel_lengths, video, video_lengths,
                 [list(u.tokens) for u in utterances])


def batches(utterances, batch_size, audio_cfg, rng=None, shuffle=False, **augment):
    "yields collated batches, in a seeded shuffled order when shuffle is set"
    order = np.arange(len(utterances))
    if shuffle:
        order = rng.permutation(len(utterances))
    for start in range(0, len(order), batch_size):
        chunk = [utterances[i] for i in order[start:start + batch_size]]
        yield collate(chunk, audio_cfg, rng=rng, **augment)
