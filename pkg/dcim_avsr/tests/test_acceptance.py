#!python
# -*- Python -*-
"""
End-to-end training runs at toy scale. These take minutes, so they only
run with DCIM_AVSR_SLOW=1 in the environment.

One ASR and one VSR model are trained on a 32-utterance corpus of all 16
tokens; the warm-started AVSR model, the cold-start baseline, the noise
sweep and the DCIM mode ablation all build on those two checkpoints.
"""

import logging
import os
import shutil
import tempfile
import unittest

from dcim_avsr.cli import noise_sweep
from dcim_avsr.dcim import DCIMMode
from dcim_avsr.model import build
from dcim_avsr.synth import SNR_GRID, NoiseSpec, SynthSpec, generate_corpus, noisy_corpus
from dcim_avsr.tests.helpers import toy_config
from dcim_avsr.training import StagePlan, TrainConfig, evaluate, run_stage


logger = logging.getLogger(__name__)

SLOW = os.environ.get('DCIM_AVSR_SLOW') == '1'

SEED = 0
N_TRAIN = 32
N_EVAL = 16
OVERFIT_EPOCHS = 300
AVSR_EPOCHS = 40
ABLATION_SLACK = 0.02


def _tcfg(**kw):
    base = dict(warmup_steps=100, base_scale=2.0, specaug=False, augment_video=False, seed=SEED)
    base.update(kw)
    return TrainConfig(**base)


def _violations(curve):
    "adjacent pairs where WER rises with SNR"
    return sum(1 for a, b in zip(curve, curve[1:]) if b > a)


@unittest.skipUnless(SLOW, 'set DCIM_AVSR_SLOW=1 to run training acceptance tests')
class TestThreeStageTraining(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.mkdtemp()
        cls.cfg = toy_config()
        spec = SynthSpec(vocab_size=16, max_tokens=3, seed=21)
        cls.train = generate_corpus(spec, N_TRAIN, model_cfg=cls.cfg)
        cls.held_out = generate_corpus(spec, N_EVAL, start=N_TRAIN, model_cfg=cls.cfg)
        cls.noisy = noisy_corpus(cls.held_out, NoiseSpec(snr_db=0.0, seed=SEED))

        cls.asr = build(cls.cfg, 'asr', seed=SEED)
        cls.asr_result = run_stage(cls.asr, StagePlan(stage='asr', epochs=OVERFIT_EPOCHS, batch_size=8),
                                   cls.train, tcfg=_tcfg(), run_dir=os.path.join(cls.tmp, 'asr'))
        cls.vsr = build(cls.cfg, 'vsr', seed=SEED)
        cls.vsr_result = run_stage(cls.vsr, StagePlan(stage='vsr', epochs=OVERFIT_EPOCHS, batch_size=8),
                                   cls.train, tcfg=_tcfg(), run_dir=os.path.join(cls.tmp, 'vsr'))
        cls.warm = cls.train_avsr(DCIMMode(), 'warm')

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.tmp)

    @classmethod
    def train_avsr(cls, mode, name, pretrained=True):
        cfg = toy_config()
        cfg.dcim = mode
        model = build(cfg, 'avsr', seed=SEED)
        if pretrained:
            plan = StagePlan(stage='avsr', epochs=AVSR_EPOCHS, batch_size=8,
                             init_asr=cls.asr_result.checkpoint, init_vsr=cls.vsr_result.checkpoint)
        else:
            plan = StagePlan.preset('avsr_direct', epochs=AVSR_EPOCHS, batch_size=8)
        run_stage(model, plan, cls.train, tcfg=_tcfg(), run_dir=os.path.join(cls.tmp, name))
        return model

    def test_asr_memorizes_training_set(self):
        history = self.asr_result.history
        logger.info('asr losses %s', ['%.3f' % m.loss for m in history[::25]])
        assert any(m.loss <= 0.1 and m.train_wer == 0.0 for m in history), history[-1]
        assert evaluate(self.asr, self.train) == 0.0

    def test_vsr_reaches_low_train_wer(self):
        history = self.vsr_result.history
        logger.info('vsr train wer %s', ['%.3f' % m.train_wer for m in history[::25]])
        assert min(m.train_wer for m in history) <= 0.05, history[-1]

    def test_warm_start_beats_cold_start(self):
        cold = self.train_avsr(DCIMMode(), 'cold', pretrained=False)
        warm_wer, cold_wer = evaluate(self.warm, self.held_out), evaluate(cold, self.held_out)
        logger.info('held-out wer: warm start %.4f, cold start %.4f', warm_wer, cold_wer)
        assert warm_wer <= cold_wer

    def test_noise_sweep_trend(self):
        rows = noise_sweep(self.warm, self.asr, self.held_out, seed=SEED)
        assert [r[0] for r in rows] == list(SNR_GRID)
        for snr, wer_a, wer_av in rows:
            if snr <= 0:
                assert wer_av <= wer_a, rows
        assert _violations([r[1] for r in rows]) <= 1, rows
        assert _violations([r[2] for r in rows]) <= 1, rows

    def test_full_interaction_leads_ablation(self):
        full = evaluate(self.warm, self.noisy)
        for name in ('v2a', 'a2v', 'no-complete'):
            model = self.train_avsr(DCIMMode.from_name(name), name)
            score = evaluate(model, self.noisy)
            logger.info('ablation %s: %.4f (dual %.4f)', name, score, full)
            assert full <= score + ABLATION_SLACK, (name, full, score)


if __name__ == '__main__':
    logging.basicConfig(level=logging.DEBUG)
    unittest.main()
