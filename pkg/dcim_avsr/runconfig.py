#!python
# -*- Python -*-
"""
Run configuration: every config dataclass of one experiment under one
section name, read from `section.key = value` text with command-line
overrides applied last.

    run.preset = toy
    run.seed = 3
    dcim.direction = v_to_a
    train.specaug = false
"""

import logging
import os
from collections import OrderedDict
from dataclasses import dataclass, field

from .audio import SpecAugmentConfig
from .configtext import apply_override, apply_text, dump_sections, iter_lines
from .errors import ConfigError
from .model import ModelConfig
from .synth import NoiseSpec, SynthSpec
from .training import StagePlan, TrainConfig


logger = logging.getLogger(__name__)

RESOLVED = 'config.resolved'


@dataclass
class RunSettings:
    preset: str = 'desk'
    schedule: str = 'desk'
    seed: int = 0
    dir: str = 'run'
    n_train: int = 64
    n_eval: int = 16
    epochs: int = 0             # 0 keeps the stage plan's count
    batch_size: int = 0         # likewise
    pretrained: bool = True
    freeze: tuple = ()
    ablation_snr: float = 0.0


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=lambda: ModelConfig.preset('desk'))
    specaug: SpecAugmentConfig = field(default_factory=SpecAugmentConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthSpec = field(default_factory=SynthSpec)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    run: RunSettings = field(default_factory=RunSettings)

    @classmethod
    def preset(cls, name):
        return cls(model=ModelConfig.preset(name), train=TrainConfig.preset(name),
                   run=RunSettings(preset=name, schedule='paper' if name == 'paper' else 'desk'))

    def sections(self):
        return OrderedDict([
            ('audio', self.model.audio), ('specaug', self.specaug), ('visual', self.model.visual),
            ('model', self.model), ('dcim', self.model.dcim), ('train', self.train),
            ('synth', self.synth), ('noise', self.noise), ('run', self.run)])

    @classmethod
    def load(cls, text='', overrides=(), origin='<config>'):
        """
        Build from config text plus 'section.key=value' overrides. The
        preset (run.preset) is chosen first, then every other line applies
        on top of it in order.
        """
        preset = 'desk'
        for _, section, key, value in iter_lines(text, origin):
            if (section, key) == ('run', 'preset'):
                preset = value.strip()
        for o in overrides:
            lhs = o.split('=', 1)[0].strip()
            if lhs == 'run.preset' and '=' in o:
                preset = o.split('=', 1)[1].strip()
        cfg = cls.preset(preset)
        apply_text(cfg.sections(), text, origin)
        for o in overrides:
            apply_override(cfg.sections(), o)
        return cfg.validate()

    @classmethod
    def from_file(cls, path=None, overrides=()):
        text = ''
        if path is not None:
            if not os.path.exists(path):
                raise ConfigError('config file {0} does not exist'.format(path))
            with open(path) as fp:
                text = fp.read()
        return cls.load(text, overrides, origin=path or '<defaults>')

    def validate(self):
        self.model.validate()
        self.specaug.validate()
        self.train.validate()
        self.synth.validate()
        self.noise.validate()
        if self.synth.vocab_size > self.model.vocab - 1:
            raise ConfigError('synth vocab_size {0} exceeds the model vocabulary of {1} tokens'.format(
                self.synth.vocab_size, self.model.vocab - 1))
        if self.run.n_train < 1 or self.run.n_eval < 0:
            raise ConfigError('run.n_train must be >= 1 and run.n_eval >= 0')
        return self

    def text(self, extra=None):
        "canonical dump; extra adds command sections (name -> dataclass)"
        sections = self.sections()
        sections.update(extra or {})
        return dump_sections(sections)

    def write_resolved(self, run_dir=None, extra=None):
        "echo the resolved config to <run_dir>/config.resolved; returns the path"
        run_dir = run_dir or self.run.dir
        if not os.path.isdir(run_dir):
            os.makedirs(run_dir)
        path = os.path.join(run_dir, RESOLVED)
        with open(path, 'w') as fp:
            fp.write(self.text(extra))
        logger.debug('resolved config written to %s', path)
        return path

    def stage_plan(self, name, init_asr=None, init_vsr=None):
        "the named plan (asr, vsr, avsr, avsr_direct) adjusted by the run section"
        plan = StagePlan.preset(name, self.run.schedule, init_asr=init_asr, init_vsr=init_vsr,
                                freeze=tuple(self.run.freeze))
        if name == 'avsr' and not self.run.pretrained:
            plan.pretrained = False
        if self.run.epochs:
            plan.epochs = self.run.epochs
        if self.run.batch_size:
            plan.batch_size = self.run.batch_size
        return plan.validate()
