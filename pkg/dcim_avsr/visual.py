#!python
# -*- Python -*-
"""
Visual front-end: a 3D convolution stem over (time, height, width), a
per-frame 2D residual network, spatial global average pooling, a linear
projection and temporal average pooling.

Normalization inside the residual network is a LayerNorm over channels at
every pixel, which keeps frames independent of each other and of the batch.
"""

import logging
import struct
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .conformer import lengths_to_mask
from .errors import ConfigError, FormatError, ShapeError
from .nn import Conv2d, Conv3d, LayerNorm, Linear, Module


logger = logging.getLogger(__name__)

CLIP_MAGIC = b'DVC1'
_CLIP_HEADER = struct.Struct('<4sIII')


@dataclass
class VisualFrontendConfig:
    frame_height: int = 32
    frame_width: int = 32
    stem_kernel: tuple = (5, 7, 7)
    stem_stride: tuple = (1, 2, 2)
    n_res_blocks: int = 4
    channels: tuple = (16, 32, 64, 128)
    blocks_per_stage: tuple = (1, 1, 1, 1)
    out_dim: int = 256
    temporal_pool_stride: int = 2

    def validate(self):
        if len(self.channels) != self.n_res_blocks:
            raise ConfigError('visual channel schedule {0} must have n_res_blocks={1} entries'.format(
                tuple(self.channels), self.n_res_blocks))
        if len(self.stem_kernel) != 3 or any(k % 2 == 0 for k in self.stem_kernel):
            raise ConfigError('stem_kernel must be three odd extents, got {0}'.format(self.stem_kernel))
        if len(self.stem_stride) != 3 or min(self.stem_stride) < 1:
            raise ConfigError('stem_stride must be three positive strides, got {0}'.format(self.stem_stride))
        if self.stem_stride[0] != 1:
            raise ConfigError('the stem must keep the frame rate (time stride 1)')
        if self.frame_height < 16 or self.frame_width < 16:
            raise ConfigError('frames must be at least 16x16, got {0}x{1}'.format(
                self.frame_height, self.frame_width))
        if len(self.blocks_per_stage) != self.n_res_blocks or min(self.blocks_per_stage) < 1:
            raise ConfigError('blocks_per_stage {0} must give n_res_blocks={1} counts of at least 1'.format(
                tuple(self.blocks_per_stage), self.n_res_blocks))
        if self.temporal_pool_stride < 1:
            raise ConfigError('temporal_pool_stride must be >= 1')
        h, w = self.stem_output_size()
        for stage in range(1, self.n_res_blocks):
            if h < 2 or w < 2:
                raise ConfigError('spatial extent {0}x{1} collapses before residual stage {2}'.format(
                    h, w, stage))
            h, w = (h - 1) // 2 + 1, (w - 1) // 2 + 1
        return self

    def stem_output_size(self):
        _, kh, kw = self.stem_kernel
        _, sh, sw = self.stem_stride
        h = (self.frame_height + 2 * (kh // 2) - kh) // sh + 1
        w = (self.frame_width + 2 * (kw // 2) - kw) // sw + 1
        return h, w


@dataclass
class VideoClip:
    frames: np.ndarray
    fps: int = 25

    def __post_init__(self):
        arr = np.asarray(self.frames, dtype=np.float64)
        if arr.ndim != 3:
            raise ShapeError('a clip is (frames, height, width), got {0}'.format(arr.shape))
        if arr.shape[1] < 16 or arr.shape[2] < 16:
            raise ShapeError('clip frames must be at least 16x16, got {0}'.format(arr.shape[1:]))
        self.frames = np.clip(arr, 0.0, 1.0)

    def __len__(self):
        return self.frames.shape[0]


def _channel_norm(norm, x):
    "LayerNorm over the channel axis of (n, c, h, w)"
    y = T.transpose(x, (0, 2, 3, 1))
    return T.transpose(norm(y), (0, 3, 1, 2))


class ResBlock(Module):
    "two 3x3 convolutions with a shortcut; a 1x1 projection when shape changes"

    def __init__(self, in_ch, out_ch, stride, rng):
        super(ResBlock, self).__init__()
        self.conv1 = self.add_child('conv1', Conv2d(in_ch, out_ch, 3, rng, stride=stride, padding=1, bias=False))
        self.norm1 = self.add_child('norm1', LayerNorm(out_ch))
        self.conv2 = self.add_child('conv2', Conv2d(out_ch, out_ch, 3, rng, padding=1, bias=False))
        self.norm2 = self.add_child('norm2', LayerNorm(out_ch))
        self.shortcut = None
        if stride != 1 or in_ch != out_ch:
            self.shortcut = self.add_child('shortcut', Conv2d(in_ch, out_ch, 1, rng, stride=stride, bias=False))
            self.shortcut_norm = self.add_child('shortcut_norm', LayerNorm(out_ch))

    def __call__(self, x):
        h = T.relu(_channel_norm(self.norm1, self.conv1(x)))
        h = _channel_norm(self.norm2, self.conv2(h))
        skip = x
        if self.shortcut is not None:
            skip = _channel_norm(self.shortcut_norm, self.shortcut(x))
        return T.relu(T.add(h, skip))


class VisualFrontend(Module):
    def __init__(self, cfg, rng):
        super(VisualFrontend, self).__init__()
        cfg.validate()
        self.cfg = cfg
        pad = tuple(k // 2 for k in cfg.stem_kernel)
        self.stem = self.add_child('stem', Conv3d(1, cfg.channels[0], cfg.stem_kernel, rng,
                                                  stride=cfg.stem_stride, padding=pad, bias=False))
        self.stem_norm = self.add_child('stem_norm', LayerNorm(cfg.channels[0]))
        self.blocks = []
        in_ch = cfg.channels[0]
        deep = max(cfg.blocks_per_stage) > 1
        for stage, ch in enumerate(cfg.channels):
            for j in range(cfg.blocks_per_stage[stage]):
                stride = 2 if stage > 0 and j == 0 else 1
                name = 'stage{0}.block{1}'.format(stage, j) if deep else 'block{0}'.format(stage)
                self.blocks.append(self.add_child(name, ResBlock(in_ch, ch, stride, rng)))
                in_ch = ch
        self.proj = self.add_child('proj', Linear(in_ch, cfg.out_dim, rng))

    def stem_features(self, clips):
        "(batch, frames, h, w) -> (batch * frames, channels, h', w')"
        b, t = clips.shape[:2]
        x = T.reshape(clips, (b, 1) + clips.shape[1:])
        x = self.stem(x)                        # (b, c, t, h', w')
        x = T.transpose(x, (0, 2, 1, 3, 4))     # (b, t, c, h', w')
        x = T.reshape(x, (b * t,) + x.shape[2:])
        return T.relu(_channel_norm(self.stem_norm, x))

    def frame_features(self, stem_out, b, t):
        "per-frame residual network, pooled and projected: (batch, frames, out_dim)"
        x = stem_out
        for block in self.blocks:
            x = block(x)
        x = T.mean(x, axis=(2, 3))
        x = T.reshape(x, (b, t, x.shape[1]))
        return self.proj(x)

    def __call__(self, clips, lengths):
        """
        clips is (batch, frames, height, width) with padded frames zeroed.
        Returns (features (batch, frames // stride, out_dim), padding mask).
        """
        lengths = np.asarray(lengths)
        if clips.ndim != 4:
            raise ShapeError('visual front-end expects (batch, frames, h, w), got {0}'.format(clips.shape))
        if clips.shape[2:] != (self.cfg.frame_height, self.cfg.frame_width):
            raise ShapeError('visual front-end built for {0}x{1} frames, got {2}'.format(
                self.cfg.frame_height, self.cfg.frame_width, clips.shape[2:]))
        b, t = clips.shape[:2]
        s = self.cfg.temporal_pool_stride
        if t < s:
            raise ShapeError('clip of {0} frames is shorter than the pooling stride {1}'.format(t, s))
        x = self.frame_features(self.stem_features(clips), b, t)
        keep = (t // s) * s
        if keep != t:
            x = T.getitem(x, (slice(None), slice(0, keep)))
        x = T.mean(T.reshape(x, (b, keep // s, s, x.shape[2])), axis=2)
        out_lengths = lengths // s
        return x, lengths_to_mask(out_lengths, x.shape[1])

    def forward_clip(self, clip):
        "one VideoClip -> (frames // stride, out_dim)"
        if not isinstance(clip, VideoClip):
            clip = VideoClip(clip)
        x, _ = self(T.Tensor(clip.frames[None]), np.array([len(clip)]))
        return T.reshape(x, x.shape[1:])


def augment_clip(frames, rng, max_shift=2, flip=True):
    "random horizontal flip and a pad-and-crop shift of up to max_shift pixels"
    arr = np.asarray(frames, dtype=np.float64)
    if flip and rng.random() < 0.5:
        arr = arr[:, :, ::-1]
    if max_shift > 0:
        dy, dx = rng.integers(-max_shift, max_shift + 1, size=2)
        padded = np.pad(arr, ((0, 0), (max_shift, max_shift), (max_shift, max_shift)), mode='edge')
        h, w = arr.shape[1:]
        arr = padded[:, max_shift + dy:max_shift + dy + h, max_shift + dx:max_shift + dx + w]
    return np.ascontiguousarray(arr)


def write_clip(path, frames):
    arr = np.asarray(frames, dtype='<f4')
    if arr.ndim != 3:
        raise ShapeError('a clip is (frames, height, width), got {0}'.format(arr.shape))
    with open(path, 'wb') as fp:
        fp.write(_CLIP_HEADER.pack(CLIP_MAGIC, *arr.shape))
        fp.write(arr.tobytes())


def read_clip(path):
    with open(path, 'rb') as fp:
        blob = fp.read()
    if len(blob) < _CLIP_HEADER.size:
        raise FormatError('{0}: too short for a clip header'.format(path))
    magic, t, h, w = _CLIP_HEADER.unpack_from(blob, 0)
    if magic != CLIP_MAGIC:
        raise FormatError('{0}: bad magic {1!r}'.format(path, magic))
    body = blob[_CLIP_HEADER.size:]
    if len(body) != 4 * t * h * w:
        raise FormatError('{0}: header promises {1}x{2}x{3} floats, file holds {4} bytes'.format(
            path, t, h, w, len(body)))
    return VideoClip(np.frombuffer(body, dtype='<f4').reshape(t, h, w).astype(np.float64))
