#!python
# -*- Python -*-

import logging
import os
import shutil
import tempfile
import unittest

import numpy as np

from dcim_avsr import tensor as T
from dcim_avsr.audio import (AudioFrontendConfig, ConvSubsampler, SpecAugmentConfig, frame_count, frames,
                             log_mel, log_mel_array, mel_centers_hz, mel_filterbank, power_spectrum,
                             read_waveform, spec_augment, subsampled_length, write_waveform)
from dcim_avsr.errors import ConfigError, FormatError, InputTooShortError
from dcim_avsr.gradcheck import check_gradients


logger = logging.getLogger(__name__)


class TestLogMel(unittest.TestCase):
    def setUp(self):
        self.cfg = AudioFrontendConfig()

    def test_frame_count(self):
        assert frame_count(400, self.cfg) == 1
        assert frame_count(559, self.cfg) == 1
        assert frame_count(560, self.cfg) == 2
        assert log_mel_array(np.zeros(16000), self.cfg).shape == (98, 80)

    def test_too_short(self):
        with self.assertRaises(InputTooShortError):
            log_mel(np.zeros(399), self.cfg)

    def test_silence_hits_floor(self):
        out = log_mel(np.zeros(1600), self.cfg).data
        assert np.all(out == np.log(self.cfg.log_floor))

    def test_tone_peaks_at_nearest_filter(self):
        centers = mel_centers_hz(self.cfg)
        k = int(np.argmin(np.abs(centers - 440.0)))
        t = np.arange(1600) / float(self.cfg.sample_rate_hz)
        mel = log_mel_array(np.sin(2.0 * np.pi * centers[k] * t), self.cfg)
        assert np.all(np.argmax(mel, axis=1) == k)

    def test_parseval(self):
        framed = frames(np.random.default_rng(0).standard_normal(2000), self.cfg)
        power = power_spectrum(framed, self.cfg.dft_size)
        energy = np.sum(framed * framed, axis=1)
        assert np.max(np.abs(power.sum(axis=1) - energy) / energy) <= 1e-6

    def test_bin_centred_tone(self):
        n = self.cfg.dft_size
        row = np.cos(2.0 * np.pi * 32 * np.arange(n) / n)[None, :]
        power = power_spectrum(row, n)[0]
        assert power.shape == (n // 2 + 1,)
        assert int(np.argmax(power)) == 32
        assert abs(power[32] - n / 2.0) <= 1e-9
        assert np.sum(np.delete(power, 32)) <= 1e-12

    def test_scale_covariance(self):
        x = np.random.default_rng(1).standard_normal(3200)
        base = log_mel_array(x, self.cfg)
        scaled = log_mel_array(3.0 * x, self.cfg)
        assert np.max(np.abs(scaled - base - 2.0 * np.log(3.0))) <= 1e-9

    def test_filterbank(self):
        fb = mel_filterbank(self.cfg)
        assert fb.shape == (257, 80)
        assert np.all(fb >= 0)
        assert np.all(fb.max(axis=0) > 0)

    def test_config_validation(self):
        with self.assertRaises(ConfigError):
            AudioFrontendConfig(hop_ms=30.0).validate()
        with self.assertRaises(ConfigError):
            AudioFrontendConfig(n_mels=300).validate()
        with self.assertRaises(ConfigError):
            SpecAugmentConfig(max_time_width=-1).validate()


class TestSpecAugment(unittest.TestCase):
    def setUp(self):
        self.mel = np.random.default_rng(2).standard_normal((50, 80)) + 5.0

    def test_no_masks_is_identity(self):
        cfg = SpecAugmentConfig(n_freq_masks=0, n_time_masks=0)
        assert np.array_equal(spec_augment(self.mel, cfg, np.random.default_rng(0)), self.mel)

    def test_full_width_mask(self):
        cfg = SpecAugmentConfig(n_freq_masks=1, max_freq_width=80, n_time_masks=0)
        for seed in range(10):
            out = spec_augment(self.mel, cfg, np.random.default_rng(seed))
            assert out.shape == self.mel.shape

    def test_only_writes_zeros(self):
        cfg = SpecAugmentConfig(max_time_width=200)
        out = spec_augment(T.Tensor(self.mel), cfg, np.random.default_rng(3)).data
        changed = out != self.mel
        assert out.shape == self.mel.shape
        assert np.all(out[changed] == 0.0)

    def test_seeded(self):
        cfg = SpecAugmentConfig()
        a = spec_augment(self.mel, cfg, np.random.default_rng(9))
        b = spec_augment(self.mel, cfg, np.random.default_rng(9))
        assert np.array_equal(a, b)


class TestSubsampler(unittest.TestCase):
    def test_lengths(self):
        assert subsampled_length(100) == 25
        assert subsampled_length(200) == 50
        model = ConvSubsampler(20, 4, 12, np.random.default_rng(0))
        x, mask = model(T.Tensor(np.random.default_rng(1).standard_normal((2, 100, 20))), [100, 60])
        assert x.shape == (2, 25, 12)
        assert list((~mask).sum(axis=1)) == [25, 15]

    def test_too_few_frames(self):
        model = ConvSubsampler(20, 4, 12, np.random.default_rng(0))
        with self.assertRaises(InputTooShortError):
            model(T.Tensor(np.zeros((1, 3, 20))), [3])

    def test_gradient(self):
        rng = np.random.default_rng(4)
        model = ConvSubsampler(8, 2, 4, rng)
        mel = T.Tensor(rng.standard_normal((1, 9, 8)), requires_grad=True)
        w = T.Tensor(rng.standard_normal((1, 3, 4)))
        report = check_gradients(lambda: T.sum(T.mul(model(mel, [9])[0], w)),
                                 [mel, model.conv1.weight, model.proj.weight], name='subsampler')
        assert report.passed, str(report)


class TestWaveformFiles(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.tmp)

    def test_write_read(self):
        path = os.path.join(self.tmp, 'a.dwv')
        x = np.sin(np.arange(1000) / 10.0) * 0.5
        write_waveform(path, x, 16000)
        y, rate = read_waveform(path)
        assert rate == 16000
        assert np.max(np.abs(x - y)) <= 1.0 / 32767.0

    def test_bad_magic(self):
        path = os.path.join(self.tmp, 'b.dwv')
        with open(path, 'wb') as fp:
            fp.write(b'RIFF' + b'\x00' * 20)
        with self.assertRaises(FormatError):
            read_waveform(path)

    def test_truncated(self):
        path = os.path.join(self.tmp, 'c.dwv')
        write_waveform(path, np.zeros(10), 16000)
        with open(path, 'rb') as fp:
            blob = fp.read()
        with open(path, 'wb') as fp:
            fp.write(blob[:-3])
        with self.assertRaises(FormatError):
            read_waveform(path)


if __name__ == '__main__':
    logging.basicConfig(level=logging.DEBUG)
    unittest.main()
