#!python
# -*- Python -*-

import logging
import unittest

import numpy as np

from dcim_avsr import tensor as T
from dcim_avsr.batch import Batch
from dcim_avsr.dcim import DCIMMode, adapter_param_count
from dcim_avsr.errors import ConfigError, EmptyInputError
from dcim_avsr.model import ModelConfig, build, output_length, param_breakdown
from dcim_avsr.tests.helpers import toy_batch, toy_config


logger = logging.getLogger(__name__)


def _zero_batch(n_mel, n_video, mel_lengths=None, video_lengths=None, cfg=None):
    cfg = cfg or toy_config()
    b = len(mel_lengths) if mel_lengths is not None else 1
    mel_lengths = np.array(mel_lengths if mel_lengths is not None else [n_mel])
    video_lengths = np.array(video_lengths if video_lengths is not None else [n_video])
    return Batch(['u{0}'.format(i) for i in range(b)],
                 np.zeros((b, n_mel, cfg.audio.n_mels)), mel_lengths,
                 np.zeros((b, n_video, cfg.visual.frame_height, cfg.visual.frame_width)), video_lengths,
                 [[1]] * b)


def _within(count, target, tol):
    return abs(count - target) <= tol * target


class TestFullPresetSizes(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cfg = ModelConfig.preset('paper')
        with T.precision('float32'):
            cls.counts = dict((v, build(cfg, v).param_count()) for v in ('asr', 'vsr', 'avsr'))
        logger.info('full-size parameter counts: %s', cls.counts)

    def test_ballpark(self):
        assert _within(self.counts['asr'], 22e6, 0.30), self.counts
        assert _within(self.counts['vsr'], 29e6, 0.30), self.counts
        assert _within(self.counts['avsr'], 53e6, 0.30), self.counts

    def test_adapter_size(self):
        cfg = ModelConfig.preset('paper')
        fusion = self.counts['avsr'] - self.counts['asr'] - self.counts['vsr']
        dcim = adapter_param_count(cfg.dcim, cfg.visual_layers, 256, 180)
        assert dcim == 10 * 125176
        # the rest is the 256 -> 256 -> 360 final adapter
        assert fusion - dcim == (256 * 256 + 256) + (256 * 256 + 256) + (256 * 360 + 360)


class TestAssembly(unittest.TestCase):
    def test_names_nest(self):
        cfg = toy_config()
        names = dict((v, set(build(cfg, v).named_parameters())) for v in ('asr', 'vsr', 'avsr'))
        assert names['asr'] <= names['avsr']
        assert names['vsr'] <= names['avsr']
        assert not names['asr'] & names['vsr']

    def test_branch_weights_follow_seed(self):
        cfg = toy_config()
        asr = build(cfg, 'asr', seed=4).named_parameters()
        avsr = build(cfg, 'avsr', seed=4).named_parameters()
        for name, p in asr.items():
            assert np.array_equal(p.data, avsr[name].data), name

    def test_breakdown(self):
        model = build(toy_config(), 'avsr')
        parts = param_breakdown(model)
        for key in ('audio.frontend', 'audio.stage1', 'audio.stage2', 'audio.stage3', 'audio.head',
                    'visual.frontend', 'visual.backend', 'fusion.dcim_adapters', 'fusion.final_adapter',
                    'aux_head'):
            assert key in parts, key
        assert sum(parts.values()) == model.param_count()

    def test_mode_counts(self):
        full = build(toy_config(), 'avsr').param_count()
        for name in DCIMMode.NAMES:
            mode = DCIMMode.from_name(name)
            count = build(toy_config(dcim=mode), 'avsr').param_count()
            expected = adapter_param_count(mode, 5, 32, 24)
            assert full - count == adapter_param_count(DCIMMode(), 5, 32, 24) - expected, name
        none = build(toy_config(dcim=DCIMMode(purification=False, completion=False)), 'avsr')
        assert param_breakdown(none).get('fusion.dcim_adapters', 0) == 0

    def test_bad_variant(self):
        with self.assertRaises(ConfigError):
            build(toy_config(), 'lipreader')


class TestForward(unittest.TestCase):
    def test_shapes(self):
        cfg = toy_config()
        batch = toy_batch(cfg, n=2)
        for variant in ('asr', 'vsr', 'avsr'):
            out = build(cfg, variant)(batch)
            assert out.logp.shape[0] == 2 and out.logp.shape[2] == cfg.vocab
            assert out.logp.shape[1] == out.lengths.max()
            probs = np.exp(out.logp.data).sum(axis=-1)
            assert np.allclose(probs, 1.0)
            for i, tokens in enumerate(batch.targets):
                assert out.lengths[i] == 2 * len(tokens), (variant, out.lengths, tokens)

    def test_avsr_taps(self):
        cfg = toy_config()
        out = build(cfg, 'avsr')(toy_batch(cfg, n=2))
        assert len(out.taps) == 2
        for tap in out.taps:
            assert tap.shape == out.logp.shape
        assert np.array_equal(out.tap_lengths, out.lengths)

    def test_rate_alignment(self):
        cfg = toy_config()
        assert output_length(cfg, 200, 50) == 25
        assert output_length(cfg, n_mel_frames=200) == 25
        assert output_length(cfg, n_video_frames=50) == 25
        with self.assertRaises(ValueError):
            output_length(cfg)
        out = build(cfg, 'avsr')(_zero_batch(200, 50))
        assert out.lengths[0] == 25
        assert out.tap_lengths[0] == 25
        assert out.logp.shape[1] == 25

    def test_zero_adapters_keep_asr_output(self):
        cfg = toy_config()
        batch = toy_batch(cfg, n=2)
        batch.video = np.zeros_like(batch.video)
        asr = build(cfg, 'asr', seed=1)(batch)
        avsr = build(cfg, 'avsr', seed=1)(batch)
        assert np.array_equal(asr.logp.data, avsr.logp.data)

    def test_fusion_at_exit(self):
        cfg = toy_config(fusion_point='stage3_exit')
        out = build(cfg, 'avsr')(toy_batch(cfg, n=1))
        assert out.logp.shape[2] == cfg.vocab

    def test_empty_after_alignment(self):
        batch = _zero_batch(16, 4, mel_lengths=[16, 16], video_lengths=[4, 1])
        with self.assertRaises(EmptyInputError):
            build(toy_config(), 'avsr')(batch)


class TestConfig(unittest.TestCase):
    def test_presets_validate(self):
        for name in ('paper', 'desk', 'toy'):
            ModelConfig.preset(name).validate()
        with self.assertRaises(ConfigError):
            ModelConfig.preset('huge')

    def test_mismatches(self):
        for kw in (dict(visual_layers=4), dict(audio_stage_dims=(24, 32)), dict(stage1_stride=3),
                   dict(vocab=1), dict(fusion_point='middle'), dict(inter_ctc_lambda=1.5),
                   dict(tap_stream='lips'), dict(stage1_kind='fancy')):
            with self.assertRaises(ConfigError):
                toy_config(**kw).validate()

    def test_digest(self):
        a = ModelConfig.preset('toy')
        b = ModelConfig.preset('toy')
        assert a.digest() == b.digest()
        b.vocab = 18
        assert a.digest() != b.digest()
        again = ModelConfig.from_text(a.canonical_text())
        assert again.digest() == a.digest()


if __name__ == '__main__':
    logging.basicConfig(level=logging.DEBUG)
    unittest.main()
