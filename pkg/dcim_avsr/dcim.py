#!python
# -*- Python -*-
"""
Dual Conformer Interaction Module.

A DCIM layer runs one audio and one visual Conformer block side by side and
lets them exchange information through two adapters: adapter_attn works on
the attention inputs and adapter_conv on the convolution inputs. For a
stream m with partner stream o:

    f_m   = FFM1(x_m)
    X_m   = Norm(f_m)
    I'_m  = f_m + Attention(X_m) + Ada_attn(X_m) + Ada_attn(X_o)
    I''_m = FFM2(Conv(I'_m)) + Ada_conv(I'_m) + Ada_conv(I'_o)
    y_m   = FinalNorm(I''_m)

The Ada(self) terms purify, the Ada(partner) terms complete. DCIMMode turns
either family off, restricts completion to one direction or confines
adapters to the last two layers.

The layer owns only its adapters; the Conformer blocks belong to the audio
and visual back-ends and are passed in, so the same block parameters serve
the ASR, VSR and AVSR models.
"""

import logging
from dataclasses import dataclass

from . import tensor as T
from .errors import AlignmentError, ConfigError, ShapeError
from .nn import Linear, Module


logger = logging.getLogger(__name__)

DIRECTIONS = ('dual', 'v_to_a', 'a_to_v')
LAYER_SCOPES = ('all', 'last_two')
ADAPTER_SHARING = ('shared', 'per_path')
TAP_STREAMS = ('audio', 'visual', 'both')


class Adapter(Module):
    "Linear(D, d) -> swish -> Linear(d, d) -> swish -> Linear(d, D')"

    def __init__(self, in_dim, bottleneck, out_dim, rng, zero_init=True):
        super(Adapter, self).__init__()
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.l1 = self.add_child('l1', Linear(in_dim, bottleneck, rng))
        self.l2 = self.add_child('l2', Linear(bottleneck, bottleneck, rng))
        self.l3 = self.add_child('l3', Linear(bottleneck, out_dim, rng, zero_init=zero_init))

    @staticmethod
    def count(in_dim, bottleneck, out_dim):
        return (in_dim * bottleneck + bottleneck
                + bottleneck * bottleneck + bottleneck
                + bottleneck * out_dim + out_dim)

    def __call__(self, x):
        if x.shape[-1] != self.in_dim:
            raise ShapeError('adapter expects feature dim {0}, got input {1}'.format(
                self.in_dim, x.shape))
        return self.l3(T.swish(self.l2(T.swish(self.l1(x)))))


@dataclass
class DCIMMode:
    direction: str = 'dual'
    purification: bool = True
    completion: bool = True
    layers: str = 'all'

    # ablation names accepted on the command line
    NAMES = ('dual', 'v2a', 'a2v', 'no-purify', 'no-complete', 'last2')

    @classmethod
    def from_name(cls, name):
        if name == 'dual':
            return cls()
        if name == 'v2a':
            return cls(direction='v_to_a')
        if name == 'a2v':
            return cls(direction='a_to_v')
        if name == 'no-purify':
            return cls(purification=False)
        if name == 'no-complete':
            return cls(completion=False)
        if name == 'last2':
            return cls(layers='last_two')
        raise ConfigError('unknown DCIM mode {0!r}, expected one of {1}'.format(name, cls.NAMES))

    def validate(self):
        if self.direction not in DIRECTIONS:
            raise ConfigError('dcim direction must be one of {0}, got {1!r}'.format(
                DIRECTIONS, self.direction))
        if self.layers not in LAYER_SCOPES:
            raise ConfigError('dcim layers must be one of {0}, got {1!r}'.format(
                LAYER_SCOPES, self.layers))
        return self

    def layer_has_adapters(self, index, n_layers):
        "index is 0-based"
        if not (self.purification or self.completion):
            return False
        return self.layers == 'all' or index >= n_layers - 2

    def completes(self, stream):
        "whether the given stream ('audio' or 'visual') receives its partner's features"
        if not self.completion:
            return False
        if self.direction == 'dual':
            return True
        return (self.direction == 'v_to_a') == (stream == 'audio')


class DCIMLayer(Module):
    def __init__(self, dim, bottleneck, mode, index, n_layers, rng, sharing='shared'):
        super(DCIMLayer, self).__init__()
        if sharing not in ADAPTER_SHARING:
            raise ConfigError('adapter_sharing must be one of {0}, got {1!r}'.format(
                ADAPTER_SHARING, sharing))
        self.dim = dim
        self.mode = mode
        self.index = index
        self.sharing = sharing
        self.active = mode.layer_has_adapters(index, n_layers)
        self._adapters = {}
        if self.active:
            for site in ('attn', 'conv'):
                if sharing == 'shared':
                    ada = self.add_child('adapter_' + site, Adapter(dim, bottleneck, dim, rng))
                    self._adapters[site, 'self'] = self._adapters[site, 'cross'] = ada
                else:
                    for path in ('self', 'cross'):
                        self._adapters[site, path] = self.add_child(
                            'adapter_{0}_{1}'.format(site, path), Adapter(dim, bottleneck, dim, rng))

    def adapter(self, site, path):
        return self._adapters.get((site, path))

    def __call__(self, audio_block, visual_block, x_a, x_v, mask):
        """
        Returns (y_a, y_v, taps) where taps maps 'audio'/'visual' to the
        adapter_conv output on that stream's own path, or None when this
        layer carries no adapters.
        """
        if x_a.shape[:2] != x_v.shape[:2]:
            raise AlignmentError('audio stream {0} and visual stream {1} differ in batch/time extent'.format(
                x_a.shape, x_v.shape))
        if x_a.shape[2] != self.dim or x_v.shape[2] != self.dim:
            raise ShapeError('DCIM layer of dim {0} got streams {1} and {2}'.format(
                self.dim, x_a.shape, x_v.shape))
        blocks = {'audio': audio_block, 'visual': visual_block}
        for name, block in blocks.items():
            if block.cfg.conv_stride != 1:
                raise ConfigError('{0} block in a DCIM layer must not downsample'.format(name))

        f = {'audio': audio_block.ffm1(x_a), 'visual': visual_block.ffm1(x_v)}
        normed = {m: blocks[m].attn.norm(f[m]) for m in blocks}
        first = {}
        for m, o in (('audio', 'visual'), ('visual', 'audio')):
            base = blocks[m].attn.apply_normed(f[m], normed[m], mask)
            first[m] = self._mix(base, 'attn', normed[m], normed[o], m)

        taps = {'audio': None, 'visual': None}
        if self.active:
            for m in blocks:
                taps[m] = self.adapter('conv', 'self')(first[m])

        out = {}
        for m, o in (('audio', 'visual'), ('visual', 'audio')):
            c, _ = blocks[m].conv(first[m], mask)
            second = blocks[m].ffm2(c)
            if self.active:
                if self.mode.purification:
                    second = T.add(second, taps[m])
                if self.mode.completes(m):
                    second = T.add(second, self.adapter('conv', 'cross')(first[o]))
            out[m] = blocks[m].final_norm(second)
        return out['audio'], out['visual'], taps

    def _mix(self, base, site, own, other, stream):
        if not self.active:
            return base
        if self.mode.purification:
            base = T.add(base, self.adapter(site, 'self')(own))
        if self.mode.completes(stream):
            base = T.add(base, self.adapter(site, 'cross')(other))
        return base


def run_dcim_stack(layers, audio_blocks, visual_blocks, x_a, x_v, mask):
    """
    Apply DCIM layers in order. Each layer sees only the previous layer's
    two output streams. Returns (x_a, x_v, per-layer taps).
    """
    if not (len(layers) == len(audio_blocks) == len(visual_blocks)):
        raise ConfigError('DCIM stack needs equal numbers of layers ({0}), audio blocks ({1}) '
                          'and visual blocks ({2})'.format(len(layers), len(audio_blocks), len(visual_blocks)))
    taps = []
    for layer, a_block, v_block in zip(layers, audio_blocks, visual_blocks):
        x_a, x_v, t = layer(a_block, v_block, x_a, x_v, mask)
        taps.append(t)
    return x_a, x_v, taps


def intermediate_tap(layer_taps, stream='audio'):
    """
    adapter_conv outputs of the even layers (1-indexed) that carry adapters,
    in layer order. stream selects 'audio', 'visual' or 'both'.
    """
    if stream not in TAP_STREAMS:
        raise ConfigError('tap stream must be one of {0}, got {1!r}'.format(TAP_STREAMS, stream))
    streams = ('audio', 'visual') if stream == 'both' else (stream,)
    out = []
    for i, taps in enumerate(layer_taps):
        if (i + 1) % 2:
            continue
        for s in streams:
            if taps.get(s) is not None:
                out.append(taps[s])
    return out


def tap_layers(mode, n_layers):
    "0-based indices of layers contributing intermediate taps"
    return [i for i in range(n_layers)
            if (i + 1) % 2 == 0 and mode.layer_has_adapters(i, n_layers)]


def adapter_param_count(mode, n_layers, dim, bottleneck, sharing='shared'):
    per_layer = 2 * Adapter.count(dim, bottleneck, dim)
    if sharing == 'per_path':
        per_layer *= 2
    return per_layer * sum(1 for i in range(n_layers) if mode.layer_has_adapters(i, n_layers))

