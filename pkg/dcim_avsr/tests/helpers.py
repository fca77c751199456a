#!python
# -*- Python -*-
"Small fixtures shared by the test modules."

import numpy as np

from dcim_avsr import tensor as T
from dcim_avsr.batch import collate
from dcim_avsr.model import ModelConfig
from dcim_avsr.synth import SynthSpec, generate_corpus


def toy_config(**kw):
    cfg = ModelConfig.preset('toy')
    for k, v in kw.items():
        setattr(cfg, k, v)
    return cfg


def toy_corpus(n=2, max_tokens=3, seed=3, vocab=16):
    return generate_corpus(SynthSpec(vocab_size=vocab, max_tokens=max_tokens, seed=seed), n)


def toy_batch(cfg=None, n=2, seed=3, max_tokens=3):
    cfg = cfg or toy_config()
    return collate(toy_corpus(n, max_tokens, seed, cfg.vocab - 1), cfg.audio)


def leaf(rng, shape, name=None):
    return T.Tensor(rng.standard_normal(shape), requires_grad=True, name=name)


def weighted(out, rng):
    "scalar sum(out * w) for a fixed random w, so every output entry matters"
    w = rng.standard_normal(out.shape)
    return lambda t: T.sum(T.mul(t, T.Tensor(w)))


def randomize(module, rng, scale=0.3):
    for p in module.parameters():
        if not np.any(p.data):
            p.assign(scale * rng.standard_normal(p.shape))
