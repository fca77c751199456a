#!python
# -*- Python -*-
"""
Parameter containers and the basic layers every encoder part is built from.

Modules register parameters and children under dotted names, so a model's
named_parameters() is a flat mapping like 'audio.stage2.block0.ffm1.fc1.weight'.
Checkpoints, warm starts and freeze patterns all address parameters by these
names.
"""

import logging
from collections import OrderedDict

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Parameter


logger = logging.getLogger(__name__)


class Module(object):
    def __init__(self):
        self._params = OrderedDict()
        self._children = OrderedDict()
        self.training = False

    def add_param(self, name, data):
        p = Parameter(data, name=name)
        self._params[name] = p
        return p

    def add_child(self, name, module):
        self._children[name] = module
        return module

    def child(self, name):
        return self._children[name]

    def named_parameters(self, prefix=''):
        out = OrderedDict()
        for name, p in self._params.items():
            out[prefix + name] = p
        for name, mod in self._children.items():
            out.update(mod.named_parameters(prefix + name + '.'))
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    def modules(self):
        yield self
        for mod in self._children.values():
            for sub in mod.modules():
                yield sub

    def train(self, mode=True):
        for mod in self.modules():
            mod.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype):
        "cast every parameter to dtype, in place"
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def param_count(self):
        return int(sum(p.size for p in self.parameters()))

    def state_dict(self):
        return OrderedDict((name, p.data.copy()) for name, p in self.named_parameters().items())

    def load_state(self, state, strict=True):
        """
        Copy arrays from state (name -> array) into matching parameters.
        Returns the names that were loaded. With strict=False, names absent
        on either side are skipped.
        """
        params = self.named_parameters()
        if strict:
            missing = sorted(set(params) - set(state))
            extra = sorted(set(state) - set(params))
            if missing or extra:
                raise ShapeError('state does not match module: missing {0}, unexpected {1}'.format(
                    missing[:5], extra[:5]))
        loaded = []
        for name, p in params.items():
            if name in state:
                p.assign(state[name])
                loaded.append(name)
        logger.debug('loaded %d of %d parameters', len(loaded), len(params))
        return loaded


def uniform_init(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    "y = x W + b with W shaped (in, out)"

    def __init__(self, in_dim, out_dim, rng, bias=True, zero_init=False):
        super(Linear, self).__init__()
        self.in_dim = in_dim
        self.out_dim = out_dim
        if zero_init:
            w = np.zeros((in_dim, out_dim))
        else:
            w = uniform_init(rng, in_dim, (in_dim, out_dim))
        self.weight = self.add_param('weight', w)
        self.bias = self.add_param('bias', np.zeros(out_dim)) if bias else None

    def __call__(self, x):
        if x.shape[-1] != self.in_dim:
            raise ShapeError('Linear({0}, {1}) applied to input of shape {2}'.format(
                self.in_dim, self.out_dim, x.shape))
        return T.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5):
        super(LayerNorm, self).__init__()
        self.eps = eps
        self.gain = self.add_param('gain', np.ones(dim))
        self.bias = self.add_param('bias', np.zeros(dim))

    def __call__(self, x):
        return T.layernorm(x, self.gain, self.bias, self.eps)


class DepthwiseConv1d(Module):
    "per-channel convolution over time for (batch, time, channels) input"

    def __init__(self, channels, kernel, rng, stride=1):
        super(DepthwiseConv1d, self).__init__()
        self.kernel = kernel
        self.stride = stride
        self.weight = self.add_param('weight', uniform_init(rng, kernel, (kernel, channels)))
        self.bias = self.add_param('bias', np.zeros(channels))

    def __call__(self, x):
        return T.conv1d_depthwise(x, self.weight, self.bias, stride=self.stride)


class Conv2d(Module):
    def __init__(self, in_ch, out_ch, kernel, rng, stride=1, padding=0, bias=True):
        super(Conv2d, self).__init__()
        self.kernel = _pair(kernel, 2)
        self.stride = _pair(stride, 2)
        self.padding = _pair(padding, 2)
        fan_in = in_ch * int(np.prod(self.kernel))
        self.weight = self.add_param('weight', uniform_init(rng, fan_in, (out_ch, in_ch) + self.kernel))
        self.bias = self.add_param('bias', np.zeros(out_ch)) if bias else None

    def __call__(self, x):
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class Conv3d(Module):
    def __init__(self, in_ch, out_ch, kernel, rng, stride=1, padding=0, bias=True):
        super(Conv3d, self).__init__()
        self.kernel = _pair(kernel, 3)
        self.stride = _pair(stride, 3)
        self.padding = _pair(padding, 3)
        fan_in = in_ch * int(np.prod(self.kernel))
        self.weight = self.add_param('weight', uniform_init(rng, fan_in, (out_ch, in_ch) + self.kernel))
        self.bias = self.add_param('bias', np.zeros(out_ch)) if bias else None

    def __call__(self, x):
        return T.conv3d(x, self.weight, self.bias, self.stride, self.padding)


def _pair(v, n):
    if isinstance(v, int):
        return (v,) * n
    v = tuple(int(x) for x in v)
    if len(v) != n:
        raise ValueError('expected {0} values, got {1!r}'.format(n, v))
    return v
