#!python
# -*- Python -*-
"""
Assembly of the ASR, VSR and AVSR recognizers.

    asr   audio front-end -> stage 1 (Efficient Conformer, one x2 downsample)
          -> stage 2 -> stage 3 -> vocabulary head
    vsr   visual front-end -> visual back-end (Conformer blocks) -> aux_head
    avsr  both front-ends; stage 1 alone; stage 2 paired block-by-block with
          the visual back-end through DCIM layers; the visual output, passed
          through fusion.final_adapter, joins the audio features at stage 3
          entry; stage 3 -> head. aux_head maps the DCIM taps to vocabulary
          log-probabilities for the intermediate CTC losses.

Every variant names its parameters the same way, so the ASR and VSR names
are each a subset of the AVSR names and warm starts copy by name. Each
branch draws its initial weights from its own random stream, so an ASR and
an AVSR model built with one seed share their audio weights.
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .audio import AudioFrontendConfig, ConvSubsampler, subsampled_length
from .configtext import apply_text, dump_sections, fnv1a_64
from .conformer import (ConformerBlockConfig, ConformerStage, StageTransition,
                        lengths_to_mask, mask_to_lengths, stride_length)
from .dcim import (ADAPTER_SHARING, TAP_STREAMS, Adapter, DCIMLayer, DCIMMode,
                   intermediate_tap, run_dcim_stack)
from .errors import ConfigError, EmptyInputError
from .nn import Linear, Module
from .visual import VisualFrontend, VisualFrontendConfig


logger = logging.getLogger(__name__)

VARIANTS = ('asr', 'vsr', 'avsr')
FUSION_POINTS = ('stage3_entry', 'stage3_exit')
STAGE1_KINDS = ('efficient', 'standard')


@dataclass
class ModelConfig:
    audio: AudioFrontendConfig = field(default_factory=AudioFrontendConfig)
    visual: VisualFrontendConfig = field(default_factory=lambda: VisualFrontendConfig(
        channels=(64, 128, 256, 512), blocks_per_stage=(3, 4, 6, 3)))
    dcim: DCIMMode = field(default_factory=DCIMMode)
    audio_stage_dims: tuple = (180, 256, 360)
    audio_stage_layers: tuple = (5, 5, 4)
    stage1_kind: str = 'efficient'
    group_size: int = 3
    stage1_stride: int = 2
    visual_layers: int = 5
    n_heads: int = 4
    conv_kernel: int = 15
    ff_expansion: int = 4
    dropout_rate: float = 0.1
    pos_encoding: str = 'relative'
    vocab: int = 256
    dcim_bottleneck: int = 180
    fusion_bottleneck: int = 256
    adapter_sharing: str = 'shared'
    tap_stream: str = 'audio'
    inter_ctc_lambda: float = 0.3
    fusion_point: str = 'stage3_entry'

    @classmethod
    def preset(cls, name):
        if name == 'paper':
            return cls()
        if name == 'desk':
            return cls(
                audio=AudioFrontendConfig(subsample_channels=16, subsample_out_dim=48),
                visual=VisualFrontendConfig(channels=(8, 16, 32, 64), out_dim=64),
                audio_stage_dims=(48, 64, 80), vocab=17,
                dcim_bottleneck=48, fusion_bottleneck=64, dropout_rate=0.1)
        if name == 'toy':
            return cls(
                audio=AudioFrontendConfig(subsample_channels=8, subsample_out_dim=24),
                visual=VisualFrontendConfig(channels=(4, 8, 8, 16), out_dim=32),
                audio_stage_dims=(24, 32, 40), vocab=17,
                dcim_bottleneck=24, fusion_bottleneck=32, dropout_rate=0.0)
        raise ConfigError('unknown model preset {0!r}, expected paper, desk or toy'.format(name))

    def sections(self):
        return OrderedDict([('audio', self.audio), ('visual', self.visual),
                            ('model', self), ('dcim', self.dcim)])

    def canonical_text(self):
        return dump_sections(self.sections())

    def digest(self):
        return fnv1a_64(self.canonical_text().encode('utf-8'))

    @classmethod
    def from_text(cls, text):
        cfg = cls()
        apply_text(cfg.sections(), text, origin='<model config>')
        return cfg.validate()

    def block_config(self, dim, **kw):
        return ConformerBlockConfig(dim=dim, n_heads=self.n_heads, conv_kernel=self.conv_kernel,
                                    ff_expansion=self.ff_expansion, dropout_rate=self.dropout_rate,
                                    pos_encoding=self.pos_encoding, **kw)

    def stage_configs(self, stage):
        dim = self.audio_stage_dims[stage]
        n = self.audio_stage_layers[stage]
        kind = {}
        if stage == 0 and self.stage1_kind == 'efficient':
            kind = dict(attention_kind='grouped', group_size=self.group_size)
        first_stride = self.stage1_stride if stage == 0 else 1
        return [self.block_config(dim, conv_stride=first_stride if i == 0 else 1, **kind)
                for i in range(n)]

    def validate(self):
        if len(self.audio_stage_dims) != 3 or len(self.audio_stage_layers) != 3:
            raise ConfigError('the audio back-end has exactly three stages; got dims {0} and layers {1}'.format(
                tuple(self.audio_stage_dims), tuple(self.audio_stage_layers)))
        if self.visual.out_dim != self.audio_stage_dims[1]:
            raise ConfigError('visual out_dim {0} must equal the stage-2 dim {1} it is paired with'.format(
                self.visual.out_dim, self.audio_stage_dims[1]))
        if self.visual_layers != self.audio_stage_layers[1]:
            raise ConfigError('visual_layers {0} must equal the stage-2 layer count {1}'.format(
                self.visual_layers, self.audio_stage_layers[1]))
        if self.audio.subsample_out_dim != self.audio_stage_dims[0]:
            raise ConfigError('audio subsample_out_dim {0} must equal the stage-1 dim {1}'.format(
                self.audio.subsample_out_dim, self.audio_stage_dims[0]))
        if min(self.audio_stage_layers) < 1:
            raise ConfigError('every audio stage needs at least one layer')
        if self.stage1_kind not in STAGE1_KINDS:
            raise ConfigError('stage1_kind must be one of {0}'.format(STAGE1_KINDS))
        if self.stage1_stride not in (1, 2):
            raise ConfigError('stage1_stride must be 1 or 2')
        if self.vocab < 2:
            raise ConfigError('vocab must hold the blank and at least one token')
        if self.fusion_point not in FUSION_POINTS:
            raise ConfigError('fusion_point must be one of {0}'.format(FUSION_POINTS))
        if self.adapter_sharing not in ADAPTER_SHARING:
            raise ConfigError('adapter_sharing must be one of {0}'.format(ADAPTER_SHARING))
        if self.tap_stream not in TAP_STREAMS:
            raise ConfigError('tap_stream must be one of {0}'.format(TAP_STREAMS))
        if not 0.0 <= self.inter_ctc_lambda <= 1.0:
            raise ConfigError('inter_ctc_lambda must lie in [0, 1]')
        self.audio.validate()
        self.visual.validate()
        self.dcim.validate()
        for stage in range(3):
            for c in self.stage_configs(stage):
                c.validate()
        return self


@dataclass
class ModelOutput:
    logp: T.Tensor
    lengths: np.ndarray
    taps: list = field(default_factory=list)
    tap_lengths: np.ndarray = None


class AudioBranch(Module):
    def __init__(self, cfg, rng):
        super(AudioBranch, self).__init__()
        d1, d2, d3 = cfg.audio_stage_dims
        self.frontend = self.add_child('frontend', ConvSubsampler(
            cfg.audio.n_mels, cfg.audio.subsample_channels, d1, rng))
        self.stage1 = self.add_child('stage1', ConformerStage(cfg.stage_configs(0), rng))
        self.transition1 = self.add_child('transition1', StageTransition(d1, d2, rng, kernel=cfg.conv_kernel))
        self.stage2 = self.add_child('stage2', ConformerStage(cfg.stage_configs(1), rng))
        self.transition2 = self.add_child('transition2', StageTransition(d2, d3, rng, kernel=cfg.conv_kernel))
        self.stage3 = self.add_child('stage3', ConformerStage(cfg.stage_configs(2), rng))
        self.head = self.add_child('head', Linear(d3, cfg.vocab, rng))

    def encode_stage1(self, mel, lengths):
        "front-end, stage 1 and the width change into stage 2"
        x, mask = self.frontend(mel, lengths)
        x, mask = self.stage1(x, mask)
        return self.transition1(x, mask)


class VisualBranch(Module):
    def __init__(self, cfg, rng):
        super(VisualBranch, self).__init__()
        d2 = cfg.audio_stage_dims[1]
        self.frontend = self.add_child('frontend', VisualFrontend(cfg.visual, rng))
        self.backend = self.add_child('backend', ConformerStage(
            [cfg.block_config(d2) for _ in range(cfg.visual_layers)], rng))


class FusionModule(Module):
    def __init__(self, cfg, rng):
        super(FusionModule, self).__init__()
        d2, d3 = cfg.audio_stage_dims[1], cfg.audio_stage_dims[2]
        n = cfg.visual_layers
        self.layers = [self.add_child('layer{0}'.format(i), DCIMLayer(
            d2, cfg.dcim_bottleneck, cfg.dcim, i, n, rng, sharing=cfg.adapter_sharing))
            for i in range(n)]
        self.final_adapter = self.add_child('final_adapter', Adapter(d2, cfg.fusion_bottleneck, d3, rng))


class Model(Module):
    def __init__(self, cfg, variant, seed=0):
        super(Model, self).__init__()
        if variant not in VARIANTS:
            raise ConfigError('model variant must be one of {0}, got {1!r}'.format(VARIANTS, variant))
        cfg.validate()
        self.cfg = cfg
        self.variant = variant
        self.audio = self.visual = self.fusion = self.aux_head = None
        if variant in ('asr', 'avsr'):
            self.audio = self.add_child('audio', AudioBranch(cfg, np.random.default_rng([seed, 0])))
        if variant in ('vsr', 'avsr'):
            self.visual = self.add_child('visual', VisualBranch(cfg, np.random.default_rng([seed, 1])))
            self.aux_head = self.add_child('aux_head', Linear(
                cfg.audio_stage_dims[1], cfg.vocab, np.random.default_rng([seed, 3])))
        if variant == 'avsr':
            self.fusion = self.add_child('fusion', FusionModule(cfg, np.random.default_rng([seed, 2])))
        logger.debug('built %s model with %d parameters', variant, self.param_count())

    def reseed(self, seed):
        "give every dropout site a fresh stream derived from seed"
        rng = np.random.default_rng([seed, 7])
        for mod in self.modules():
            if hasattr(mod, 'dropout_rate'):
                mod.rng = rng

    def __call__(self, batch):
        if self.variant == 'asr':
            return self.forward_asr(batch)
        if self.variant == 'vsr':
            return self.forward_vsr(batch)
        return self.forward_avsr(batch)

    def _head(self, x, head):
        return T.log_softmax(head(x), axis=-1)

    def forward_asr(self, batch):
        a = self.audio
        x, mask = a.encode_stage1(T.Tensor(batch.mel), batch.mel_lengths)
        x, mask = a.stage2(x, mask)
        x, mask = a.transition2(x, mask)
        x, mask = a.stage3(x, mask)
        return ModelOutput(self._head(x, a.head), mask_to_lengths(mask))

    def forward_vsr(self, batch):
        v = self.visual
        x, mask = v.frontend(T.Tensor(batch.video), batch.video_lengths)
        x, mask = v.backend(x, mask)
        return ModelOutput(self._head(x, self.aux_head), mask_to_lengths(mask))

    def forward_avsr(self, batch):
        a, v = self.audio, self.visual
        x_a, mask_a = a.encode_stage1(T.Tensor(batch.mel), batch.mel_lengths)
        x_v, mask_v = v.frontend(T.Tensor(batch.video), batch.video_lengths)
        la, lv = mask_to_lengths(mask_a), mask_to_lengths(mask_v)
        n = np.minimum(la, lv)
        if n.min() < 1:
            raise EmptyInputError('utterance {0} has no frames left after aligning audio ({1}) and video ({2})'.format(
                int(np.argmin(n)), la[np.argmin(n)], lv[np.argmin(n)]))
        if np.any(np.abs(la - lv) > 1):
            logger.debug('audio/visual lengths differ by more than one frame: %s vs %s', la, lv)
        t = int(n.max())
        if x_a.shape[1] != t:
            x_a = T.getitem(x_a, (slice(None), slice(0, t)))
        if x_v.shape[1] != t:
            x_v = T.getitem(x_v, (slice(None), slice(0, t)))
        mask = lengths_to_mask(n, t)

        x_a, x_v, layer_taps = run_dcim_stack(self.fusion.layers, a.stage2.blocks, v.backend.blocks,
                                              x_a, x_v, mask)
        x_a, mask3 = a.transition2(x_a, mask)
        visual = self.fusion.final_adapter(x_v)
        if self.cfg.fusion_point == 'stage3_entry':
            x_a = T.add(x_a, visual)
        x_a, mask3 = a.stage3(x_a, mask3)
        if self.cfg.fusion_point == 'stage3_exit':
            x_a = T.add(x_a, visual)
        taps = [self._head(tap, self.aux_head) for tap in intermediate_tap(layer_taps, self.cfg.tap_stream)]
        return ModelOutput(self._head(x_a, a.head), mask_to_lengths(mask3), taps, n)


def build(cfg, variant, seed=0):
    return Model(cfg, variant, seed=seed)


def output_length(cfg, n_mel_frames=None, n_video_frames=None):
    "head length for the given input lengths, from the stride arithmetic alone"
    out = []
    if n_mel_frames is not None:
        out.append(stride_length(subsampled_length(n_mel_frames), cfg.stage1_stride))
    if n_video_frames is not None:
        out.append(n_video_frames // cfg.visual.temporal_pool_stride)
    if not out:
        raise ValueError('need at least one input length')
    return min(out)


def param_breakdown(model):
    """
    Parameter counts per part: front-ends, each stage, transitions, DCIM
    adapters, the final fusion adapter and heads, in model order.
    """
    out = OrderedDict()
    for name, p in model.named_parameters().items():
        parts = name.split('.')
        if parts[0] == 'fusion':
            key = 'fusion.final_adapter' if parts[1] == 'final_adapter' else 'fusion.dcim_adapters'
        elif parts[0] == 'aux_head':
            key = 'aux_head'
        else:
            key = '.'.join(parts[:2])
        out[key] = out.get(key, 0) + p.size
    return out
