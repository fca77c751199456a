#!python

from .errors import (AVSRError, AlignmentError, CheckpointError, ConfigError, DivergenceError,
                     EmptyInputError, InputTooShortError, ShapeError, TapeError, TokenError,
                     UndefinedRateError, UndefinedSNRError)
from .tensor import Tape, Tensor, Parameter, precision
from .audio import AudioFrontendConfig, SpecAugmentConfig, log_mel, spec_augment
from .visual import VisualFrontendConfig, VideoClip
from .conformer import ConformerBlock, ConformerBlockConfig
from .dcim import Adapter, DCIMLayer, DCIMMode, intermediate_tap
from .ctc import ctc_loss, ctc_brute_force, greedy_decode, inter_ctc_combine, wer
from .model import Model, ModelConfig, build, param_breakdown
from .checkpoint import load, save, warm_start
from .training import Adam, StagePlan, TrainConfig, lr, run_stage
from .synth import NoiseSpec, SynthSpec, generate_corpus, mix_noise
from .runconfig import RunConfig
from .VERSION import __doc__ as __version__

__all__ = [
    'AVSRError', 'AlignmentError', 'CheckpointError', 'ConfigError', 'DivergenceError',
    'EmptyInputError', 'InputTooShortError', 'ShapeError', 'TapeError', 'TokenError',
    'UndefinedRateError', 'UndefinedSNRError',
    'Tape', 'Tensor', 'Parameter', 'precision',
    'AudioFrontendConfig', 'SpecAugmentConfig', 'log_mel', 'spec_augment',
    'VisualFrontendConfig', 'VideoClip',
    'ConformerBlock', 'ConformerBlockConfig',
    'Adapter', 'DCIMLayer', 'DCIMMode', 'intermediate_tap',
    'ctc_loss', 'ctc_brute_force', 'greedy_decode', 'inter_ctc_combine', 'wer',
    'Model', 'ModelConfig', 'build', 'param_breakdown',
    'load', 'save', 'warm_start',
    'Adam', 'StagePlan', 'TrainConfig', 'lr', 'run_stage',
    'NoiseSpec', 'SynthSpec', 'generate_corpus', 'mix_noise',
    'RunConfig',
    '__version__',
]
