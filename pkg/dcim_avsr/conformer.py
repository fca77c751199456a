#!python
# -*- Python -*-
"""
Conformer encoder blocks.

A block is FeedForward (half step) -> self attention -> convolution module ->
FeedForward (half step) -> LayerNorm, each sub-module pre-normed with a
residual. Self attention uses relative sinusoidal position bias, optionally
over groups of g consecutive frames (the grouped attention of Efficient
Conformer stages). The convolution module can downsample time by 2.

Sequences are batched as (batch, time, dim) tensors with a boolean padding
mask of shape (batch, time) that is True at padded frames. Values at padded
frames never influence values at real frames.
"""

import logging
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .nn import DepthwiseConv1d, LayerNorm, Linear, Module


logger = logging.getLogger(__name__)

ATTENTION_KINDS = ('standard_relpos', 'grouped')
POS_ENCODINGS = ('relative', 'absolute')


@dataclass
class ConformerBlockConfig:
    dim: int
    n_heads: int = 4
    conv_kernel: int = 15
    ff_expansion: int = 4
    attention_kind: str = 'standard_relpos'
    group_size: int = 1
    conv_stride: int = 1
    dropout_rate: float = 0.0
    pos_encoding: str = 'relative'

    def validate(self):
        if self.dim < 1 or self.dim % self.n_heads:
            raise ConfigError('block dim {0} must be a positive multiple of n_heads {1}'.format(
                self.dim, self.n_heads))
        if self.conv_kernel < 1 or self.conv_kernel % 2 == 0:
            raise ConfigError('conv_kernel must be odd, got {0}'.format(self.conv_kernel))
        if self.attention_kind not in ATTENTION_KINDS:
            raise ConfigError('attention_kind must be one of {0}, got {1!r}'.format(
                ATTENTION_KINDS, self.attention_kind))
        if self.group_size < 1:
            raise ConfigError('group_size must be >= 1, got {0}'.format(self.group_size))
        if self.conv_stride not in (1, 2):
            raise ConfigError('conv_stride must be 1 or 2, got {0}'.format(self.conv_stride))
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError('dropout_rate must lie in [0, 1), got {0}'.format(self.dropout_rate))
        if self.pos_encoding not in POS_ENCODINGS:
            raise ConfigError('pos_encoding must be one of {0}, got {1!r}'.format(
                POS_ENCODINGS, self.pos_encoding))
        return self

    @property
    def effective_group(self):
        return self.group_size if self.attention_kind == 'grouped' else 1


def lengths_to_mask(lengths, t):
    lengths = np.asarray(lengths)
    return np.arange(t)[None, :] >= lengths[:, None]


def mask_to_lengths(mask):
    return (~np.asarray(mask, dtype=bool)).sum(axis=1)


def stride_length(n, stride):
    "length after a 'same'-padded convolution with the given stride"
    if stride == 1:
        return n
    return (n - 1) // stride + 1


def _sinusoid(positions, dim):
    positions = np.asarray(positions, dtype=np.float64)
    half = (dim + 1) // 2
    inv_freq = 1.0 / (10000.0 ** (np.arange(half) * 2.0 / dim))
    angles = positions[:, None] * inv_freq[None, :]
    table = np.zeros((len(positions), 2 * half))
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles)
    return table[:, :dim]


def relative_positions(n, dim):
    "sinusoids for relative offsets n-1, n-2, ..., -(n-1)"
    return _sinusoid(np.arange(n - 1, -n, -1), dim)


def absolute_positions(n, dim):
    return _sinusoid(np.arange(n), dim)


def relative_shift(scores, n):
    """
    Turn (..., n, 2n-1) scores against relative offsets into (..., n, n)
    scores where entry [i, j] holds the score for offset i - j.
    """
    rows = np.arange(n)[:, None]
    cols = (n - 1) - rows + np.arange(n)[None, :]
    lead = (slice(None),) * (scores.ndim - 2)
    return T.getitem(scores, lead + (rows, cols))


class FeedForward(Module):
    "x + 0.5 * Linear(dropout(swish(Linear(LayerNorm(x)))))"

    def __init__(self, dim, expansion, dropout_rate, rng):
        super(FeedForward, self).__init__()
        self.dropout_rate = dropout_rate
        self.rng = rng
        self.norm = self.add_child('norm', LayerNorm(dim))
        self.fc1 = self.add_child('fc1', Linear(dim, dim * expansion, rng))
        self.fc2 = self.add_child('fc2', Linear(dim * expansion, dim, rng))

    def __call__(self, x):
        h = T.swish(self.fc1(self.norm(x)))
        h = T.dropout(h, self.dropout_rate, self.training, self.rng)
        h = self.fc2(h)
        return T.add(x, T.mul(h, 0.5))


class MultiHeadSelfAttention(Module):
    """
    Multi-head self attention with Transformer-XL style relative position
    bias. With group_size g > 1 the time axis is right-padded to a multiple
    of g and each run of g frames is folded into one position of width g*dim
    before attending; heads keep their per-frame layout so g=1 is the
    ordinary attention.
    """

    def __init__(self, cfg, rng):
        super(MultiHeadSelfAttention, self).__init__()
        d = cfg.dim
        self.dim = d
        self.n_heads = cfg.n_heads
        self.head_dim = d // cfg.n_heads
        self.group = cfg.effective_group
        self.relative = cfg.pos_encoding == 'relative'
        self.dropout_rate = cfg.dropout_rate
        self.rng = rng
        self.ln = self.add_child('norm', LayerNorm(d))
        self.wq = self.add_child('query', Linear(d, d, rng))
        self.wk = self.add_child('key', Linear(d, d, rng))
        self.wv = self.add_child('value', Linear(d, d, rng))
        self.wo = self.add_child('out', Linear(d, d, rng))
        if self.relative:
            self.wpos = self.add_child('pos', Linear(d, d, rng, bias=False))
            self.pos_bias_u = self.add_param('pos_bias_u', np.zeros((self.n_heads, self.head_dim)))
            self.pos_bias_v = self.add_param('pos_bias_v', np.zeros((self.n_heads, self.head_dim)))
        self.last_probs = None

    def norm(self, x):
        return self.ln(x)

    def __call__(self, x, mask):
        return self.apply_normed(x, self.norm(x), mask)

    def apply_normed(self, residual, normed, mask):
        "residual + attention over the already-normalized input"
        return T.add(residual, self.attend(normed, mask))

    def _split_heads(self, t, b, groups):
        g, h, dh = self.group, self.n_heads, self.head_dim
        t = T.reshape(t, (b, groups, g, h, dh))
        t = T.transpose(t, (0, 3, 1, 2, 4))
        return T.reshape(t, (b, h, groups, g * dh))

    def _tile(self, bias):
        "(heads, head_dim) -> (1, heads, 1, g*head_dim), matching _split_heads"
        if self.group > 1:
            bias = T.concat([bias] * self.group, axis=1)
        return T.reshape(bias, (1, self.n_heads, 1, self.group * self.head_dim))

    def attend(self, x, mask):
        mask = np.asarray(mask, dtype=bool)
        b, n, d = x.shape
        if d != self.dim:
            raise ShapeError('attention of dim {0} applied to input {1}'.format(self.dim, x.shape))
        if mask.shape != (b, n):
            raise ShapeError('mask {0} does not match input {1}'.format(mask.shape, x.shape))
        g, h, dh = self.group, self.n_heads, self.head_dim
        x = T.masked_fill(x, mask[:, :, None], 0.0)
        padded = -(-n // g) * g
        if padded != n:
            x = T.pad(x, ((0, 0), (0, padded - n), (0, 0)))
            mask = np.pad(mask, ((0, 0), (0, padded - n)), constant_values=True)
        groups = padded // g
        if not self.relative:
            x = T.add(x, absolute_positions(padded, d).astype(x.dtype))
        q = self._split_heads(self.wq(x), b, groups)
        k = self._split_heads(self.wk(x), b, groups)
        v = self._split_heads(self.wv(x), b, groups)
        k_t = T.transpose(k, (0, 1, 3, 2))
        scale = 1.0 / np.sqrt(g * dh)

        if self.relative:
            pos = T.Tensor(relative_positions(groups, d))
            p = T.reshape(self.wpos(pos), (2 * groups - 1, h, dh))
            p = T.transpose(p, (1, 2, 0))   # (heads, head_dim, offsets)
            if g > 1:
                p = T.concat([p] * g, axis=1)
            p = T.reshape(p, (1, h, g * dh, 2 * groups - 1))
            content = T.matmul(T.add(q, self._tile(self.pos_bias_u)), k_t)
            position = T.matmul(T.add(q, self._tile(self.pos_bias_v)), p)
            scores = T.add(content, relative_shift(position, groups))
        else:
            scores = T.matmul(q, k_t)
        scores = T.mul(scores, scale)

        key_mask = mask.reshape(b, groups, g).all(axis=2)[:, None, None, :]
        scores = T.masked_fill(scores, key_mask, T.MASK_VALUE)
        probs = T.masked_fill(T.softmax(scores, axis=-1), key_mask, 0.0)
        self.last_probs = probs.data

        ctx = T.matmul(probs, v)   # (b, heads, groups, g*head_dim)
        ctx = T.reshape(ctx, (b, h, groups, g, dh))
        ctx = T.transpose(ctx, (0, 2, 3, 1, 4))
        ctx = T.reshape(ctx, (b, padded, d))
        if padded != n:
            ctx = T.getitem(ctx, (slice(None), slice(0, n)))
            mask = mask[:, :n]
        out = T.dropout(self.wo(ctx), self.dropout_rate, self.training, self.rng)
        return T.masked_fill(out, mask[:, :, None], 0.0)


class ConvModule(Module):
    """
    LayerNorm -> pointwise (dim -> 2 dim) -> GLU -> depthwise conv (kernel,
    stride) -> LayerNorm -> swish -> pointwise -> dropout. Residual only
    when stride is 1.
    """

    def __init__(self, dim, kernel, stride, dropout_rate, rng):
        super(ConvModule, self).__init__()
        self.stride = stride
        self.dropout_rate = dropout_rate
        self.rng = rng
        self.ln = self.add_child('norm', LayerNorm(dim))
        self.pw1 = self.add_child('pointwise1', Linear(dim, 2 * dim, rng))
        self.dw = self.add_child('depthwise', DepthwiseConv1d(dim, kernel, rng, stride=stride))
        self.dw_norm = self.add_child('depthwise_norm', LayerNorm(dim))
        self.pw2 = self.add_child('pointwise2', Linear(dim, dim, rng))

    def __call__(self, x, mask):
        "returns (output, output mask)"
        mask = np.asarray(mask, dtype=bool)
        h = T.glu(self.pw1(self.ln(x)), axis=-1)
        h = T.masked_fill(h, mask[:, :, None], 0.0)
        h = self.dw(h)
        h = T.swish(self.dw_norm(h))
        h = T.dropout(self.pw2(h), self.dropout_rate, self.training, self.rng)
        if self.stride == 1:
            return T.add(x, h), mask
        lengths = stride_length(mask_to_lengths(mask), self.stride)
        return h, lengths_to_mask(lengths, h.shape[1])


class ConformerBlock(Module):
    def __init__(self, cfg, rng):
        super(ConformerBlock, self).__init__()
        cfg.validate()
        self.cfg = cfg
        self.ffm1 = self.add_child('ffm1', FeedForward(cfg.dim, cfg.ff_expansion, cfg.dropout_rate, rng))
        self.attn = self.add_child('attn', MultiHeadSelfAttention(cfg, rng))
        self.conv = self.add_child('conv', ConvModule(cfg.dim, cfg.conv_kernel, cfg.conv_stride,
                                                      cfg.dropout_rate, rng))
        self.ffm2 = self.add_child('ffm2', FeedForward(cfg.dim, cfg.ff_expansion, cfg.dropout_rate, rng))
        self.final_norm = self.add_child('final_norm', LayerNorm(cfg.dim))

    def __call__(self, x, mask):
        "returns (output, output mask)"
        f = self.ffm1(x)
        a = self.attn.apply_normed(f, self.attn.norm(f), mask)
        c, mask = self.conv(a, mask)
        return self.final_norm(self.ffm2(c)), mask


class ConformerStage(Module):
    "blocks applied in order, registered as block0, block1, ..."

    def __init__(self, cfgs, rng):
        super(ConformerStage, self).__init__()
        self.blocks = [self.add_child('block{0}'.format(i), ConformerBlock(c, rng))
                       for i, c in enumerate(cfgs)]

    def __len__(self):
        return len(self.blocks)

    def __call__(self, x, mask):
        for block in self.blocks:
            x, mask = block(x, mask)
        return x, mask


class StageTransition(Module):
    "affine change of width between stages, optionally halving time"

    def __init__(self, in_dim, out_dim, rng, time_stride=1, kernel=15):
        super(StageTransition, self).__init__()
        if time_stride not in (1, 2):
            raise ConfigError('time_stride must be 1 or 2, got {0}'.format(time_stride))
        self.time_stride = time_stride
        self.proj = self.add_child('proj', Linear(in_dim, out_dim, rng))
        self.dw = None
        if time_stride == 2:
            self.dw = self.add_child('depthwise', DepthwiseConv1d(out_dim, kernel, rng, stride=2))

    def __call__(self, x, mask):
        mask = np.asarray(mask, dtype=bool)
        y = self.proj(x)
        if self.dw is None:
            return y, mask
        y = self.dw(T.masked_fill(y, mask[:, :, None], 0.0))
        lengths = stride_length(mask_to_lengths(mask), 2)
        return y, lengths_to_mask(lengths, y.shape[1])
