#!python
# -*- Python -*-

import csv
import logging
import os
import shutil
import tempfile
import unittest
from collections import OrderedDict

import numpy as np

from dcim_avsr import checkpoint
from dcim_avsr import tensor as T
from dcim_avsr.errors import ConfigError
from dcim_avsr.model import build
from dcim_avsr.tensor import Parameter
from dcim_avsr.tests.helpers import toy_batch, toy_config, toy_corpus
from dcim_avsr.training import (METRICS_HEADER, Adam, StagePlan, TrainConfig, WarmupSchedule, batch_loss,
                                decode, frozen_names, lr, run_stage)


logger = logging.getLogger(__name__)


def _quiet_config(**kw):
    cfg = TrainConfig(warmup_steps=4, specaug=False, augment_video=False, precision='float64')
    for k, v in kw.items():
        setattr(cfg, k, v)
    return cfg


class TestSchedule(unittest.TestCase):
    def test_peak(self):
        rates = [lr(s, 256, 100) for s in range(1, 400)]
        assert int(np.argmax(rates)) + 1 == 100
        assert abs(max(rates) - 256 ** -0.5 * 100 ** -0.5) <= 1e-15

    def test_branches(self):
        assert abs(lr(10, 256, 100) - 256 ** -0.5 * 10 * 100 ** -1.5) <= 1e-15
        assert abs(lr(400, 256, 100) - 256 ** -0.5 * 400 ** -0.5) <= 1e-15
        assert abs(lr(400, 256, 100, base_scale=2.0) - 2 * lr(400, 256, 100)) <= 1e-15

    def test_decays(self):
        rates = [lr(s, 64, 50) for s in range(50, 500)]
        assert all(a > b for a, b in zip(rates, rates[1:]))

    def test_step_zero(self):
        with self.assertRaises(ValueError):
            lr(0, 256, 100)
        with self.assertRaises(ValueError):
            WarmupSchedule(256, 100)(0)


class TestAdam(unittest.TestCase):
    def params(self, values):
        return OrderedDict([('w', Parameter(np.array(values, dtype=np.float64), name='w'))])

    def test_zero_gradient(self):
        params = self.params([1.0, -2.0])
        opt = Adam(params, TrainConfig(), WarmupSchedule(4, 1))
        assert opt.step({'w': np.zeros(2)})
        assert np.array_equal(params['w'].data, [1.0, -2.0])

    def test_first_step_is_signed_lr(self):
        params = self.params([1.0, 1.0, 1.0])
        cfg = TrainConfig(clip_norm=0.0)
        opt = Adam(params, cfg, WarmupSchedule(4, 1))
        opt.step({'w': np.array([3.0, -0.5, 0.0])})
        rate = opt.last_lr
        assert abs(rate - lr(1, 4, 1)) <= 1e-15
        assert np.allclose(params['w'].data, [1.0 - rate, 1.0 + rate, 1.0], rtol=0, atol=1e-8)

    def test_rejects_non_finite(self):
        params = self.params([1.0, 2.0])
        opt = Adam(params, TrainConfig(), WarmupSchedule(4, 1))
        assert not opt.step({'w': np.array([np.nan, 1.0])})
        assert not opt.step({'w': np.array([np.inf, 1.0])})
        assert opt.rejected == 2 and opt.step_count == 0
        assert np.array_equal(params['w'].data, [1.0, 2.0])

    def test_descends_quadratic(self):
        params = self.params([3.0, -4.0])
        opt = Adam(params, TrainConfig(clip_norm=0.0), WarmupSchedule(4, 10))
        start = float(np.sum(params['w'].data ** 2))
        for _ in range(200):
            opt.step({'w': 2.0 * params['w'].data})
        assert float(np.sum(params['w'].data ** 2)) < 0.01 * start

    def test_uses_tape_gradients(self):
        params = self.params([2.0])
        opt = Adam(params, TrainConfig(), WarmupSchedule(4, 1))
        with T.Tape() as tape:
            loss = T.sum(T.mul(params['w'], params['w']))
        tape.backward(loss)
        opt.step()
        assert params['w'].data[0] < 2.0

    def test_frozen(self):
        model = build(toy_config(), 'avsr')
        names = frozen_names(model, ['audio.*', 'visual.frontend.*'])
        assert names and all(n.startswith(('audio.', 'visual.frontend.')) for n in names)
        params = model.named_parameters()
        opt = Adam(params, TrainConfig(), WarmupSchedule(40, 1), frozen=names)
        before = params[names[0]].data.copy()
        opt.step(dict((n, np.ones(p.shape)) for n, p in params.items()))
        assert np.array_equal(params[names[0]].data, before)
        assert names[0] not in opt.params


class TestPlans(unittest.TestCase):
    def test_presets(self):
        plan = StagePlan.preset('asr')
        assert (plan.epochs, plan.batch_size) == (300, 8)
        plan = StagePlan.preset('avsr_direct', schedule='paper')
        assert plan.stage == 'avsr' and not plan.pretrained
        assert (plan.epochs, plan.batch_size) == (80, 32)
        assert plan.validate().init_paths() == []
        with self.assertRaises(ConfigError):
            StagePlan.preset('lipread')

    def test_warm_avsr_needs_checkpoints(self):
        with self.assertRaises(ConfigError):
            StagePlan.preset('avsr').validate()
        plan = StagePlan.preset('avsr', init_asr='a.ckpt', init_vsr='v.ckpt').validate()
        assert plan.init_paths() == ['a.ckpt', 'v.ckpt']

    def test_bad_plan(self):
        with self.assertRaises(ConfigError):
            StagePlan(stage='ssl').validate()
        with self.assertRaises(ConfigError):
            StagePlan(epochs=0).validate()

    def test_train_config(self):
        for kw in (dict(warmup_steps=0), dict(beta1=1.0), dict(eps=0.0), dict(precision='float16')):
            with self.assertRaises(ConfigError):
                _quiet_config(**kw).validate()
        assert TrainConfig.preset('paper').warmup_steps == 10000


class TestStage(unittest.TestCase):
    def setUp(self):
        self.dir = tempfile.mkdtemp(prefix='dcim-train-test-')

    def tearDown(self):
        shutil.rmtree(self.dir, ignore_errors=True)

    def run_asr(self, name):
        model = build(toy_config(), 'asr', seed=0)
        plan = StagePlan(stage='asr', epochs=1, batch_size=2)
        run_dir = os.path.join(self.dir, name)
        return run_stage(model, plan, toy_corpus(n=4, vocab=16), tcfg=_quiet_config(), run_dir=run_dir)

    def test_deterministic(self):
        a = self.run_asr('a')
        b = self.run_asr('b')
        assert a.losses == b.losses
        assert np.isfinite(a.losses[0])

    def test_outputs(self):
        result = self.run_asr('out')
        assert os.path.exists(result.checkpoint)
        with open(result.metrics, newline='') as fp:
            rows = list(csv.reader(fp))
        assert tuple(rows[0]) == METRICS_HEADER
        assert len(rows) == 2 and rows[1][0] == '1'
        assert rows[1][3] == 'nan'
        again = checkpoint.load(result.checkpoint)
        assert again.variant == 'asr'

    def test_variant_mismatch(self):
        with self.assertRaises(ConfigError):
            run_stage(build(toy_config(), 'vsr'), StagePlan(stage='asr', epochs=1), toy_corpus(n=1))

    def test_cold_avsr(self):
        model = build(toy_config(), 'avsr', seed=0)
        plan = StagePlan.preset('avsr_direct', epochs=1, batch_size=2)
        result = run_stage(model, plan, toy_corpus(n=2), tcfg=_quiet_config())
        assert not result.initialized
        assert len(result.history) == 1

    def test_decode(self):
        model = build(toy_config(), 'vsr')
        decoded = decode(model, toy_corpus(n=3), batch_size=2)
        assert len(decoded.ids) == len(decoded.refs) == len(decoded.hyps) == 3
        assert 0.0 <= decoded.wer


class TestGradientFlow(unittest.TestCase):
    def test_adapters_receive_gradient(self):
        cfg = toy_config()
        model = build(cfg, 'avsr', seed=0)
        batch = toy_batch(cfg, n=2)
        with T.Tape() as tape:
            loss, out = batch_loss(model, batch)
        tape.backward(loss)
        assert np.isfinite(loss.item())
        assert len(out.taps) == 2
        params = model.named_parameters()
        for i in (1, 3):
            for site in ('attn', 'conv'):
                g = params['fusion.layer{0}.adapter_{1}.l3.weight'.format(i, site)].grad
                assert g is not None and np.any(g), (i, site)
        assert np.any(params['fusion.final_adapter.l3.weight'].grad)
        # taps start at zero, so only the head bias sees them at first
        assert np.any(params['aux_head.bias'].grad)

    def test_lambda_zero_skips_taps(self):
        cfg = toy_config(inter_ctc_lambda=0.0)
        model = build(cfg, 'avsr', seed=0)
        batch = toy_batch(cfg, n=1)
        with T.Tape() as tape:
            loss, _ = batch_loss(model, batch)
        tape.backward(loss)
        assert model.named_parameters()['aux_head.weight'].grad is None


if __name__ == '__main__':
    logging.basicConfig(level=logging.DEBUG)
    unittest.main()
