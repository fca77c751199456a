#!python
# -*- Python -*-
"""
Dense tensors with reverse-mode differentiation.

Operations are recorded on the active Tape (define-by-run) whenever one of
their inputs requires a gradient. Tape.backward() walks the recorded nodes
in reverse order and hands every leaf its dLoss/dLeaf.

    with Tape() as tape:
        loss = tensor.sum(tensor.mul(x, x))
    grads = tape.backward(loss)
    grads[x]   # == 2 * x.data

A Tape belongs to the thread that entered it. Parallel evaluation uses one
tape per thread over read-only parameters.
"""

import contextlib
import itertools
import logging
import threading

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError, TapeError


logger = logging.getLogger(__name__)

_local = threading.local()

PRECISIONS = {
    'float64': np.float64,
    'float32': np.float32,
}

# Large finite stand-in for -inf in masked attention scores; keeps
# fully-masked rows free of NaN.
MASK_VALUE = -1e30


def get_dtype():
    return getattr(_local, 'dtype', np.float64)


def set_precision(name):
    "select 'float64' (verification) or 'float32' (training) for new tensors"
    try:
        _local.dtype = PRECISIONS[name]
    except KeyError:
        raise ValueError('unknown precision {0!r}, expected one of {1}'.format(
            name, sorted(PRECISIONS)))


@contextlib.contextmanager
def precision(name):
    old = get_dtype()
    set_precision(name)
    try:
        yield
    finally:
        _local.dtype = old


def _tape_stack():
    stack = getattr(_local, 'tapes', None)
    if stack is None:
        stack = _local.tapes = []
    return stack


def active_tape():
    stack = _tape_stack()
    if stack:
        return stack[-1]
    return None


class Tensor(object):
    """
    An immutable-shape array plus the bookkeeping needed to take part in a
    tape. `tape_id` is (tape serial, node index) for values produced while
    recording, None for leaves and detached values.
    """

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        self.data = np.array(data, dtype=dtype or get_dtype())
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.grad = None
        self.tape_id = None

    @classmethod
    def _wrap(cls, arr):
        out = cls.__new__(cls)
        out.data = arr
        out.requires_grad = False
        out.name = None
        out.grad = None
        out.tape_id = None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data.copy()

    def item(self):
        return float(self.data.reshape(()))

    def detach(self):
        return Tensor._wrap(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        label = ' name={0!r}'.format(self.name) if self.name else ''
        return 'Tensor(shape={0}{1}, requires_grad={2})'.format(
            self.shape, label, self.requires_grad)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = shape[0]
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = axes[0]
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


class Parameter(Tensor):
    "A named leaf that always requires a gradient."

    def __init__(self, data, name=None, dtype=None):
        super(Parameter, self).__init__(data, requires_grad=True, name=name, dtype=dtype)

    def assign(self, arr):
        "replace the values, keeping shape and dtype"
        arr = np.asarray(arr, dtype=self.data.dtype)
        if arr.shape != self.data.shape:
            raise ShapeError('cannot assign {0} values to parameter {1!r} of shape {2}'.format(
                arr.shape, self.name, self.data.shape))
        self.data = arr.copy()


def as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


class _Node(object):
    __slots__ = ('out', 'parents', 'vjp')

    def __init__(self, out, parents, vjp):
        self.out = out
        self.parents = parents
        self.vjp = vjp


class GradientMap(object):
    "dLoss/dLeaf, keyed by tensor identity"

    def __init__(self):
        self._entries = {}

    def accumulate(self, tensor, grad):
        key = id(tensor)
        if key in self._entries:
            self._entries[key] = (tensor, self._entries[key][1] + grad)
        else:
            self._entries[key] = (tensor, grad)

    def __getitem__(self, tensor):
        return self._entries[id(tensor)][1]

    def get(self, tensor, default=None):
        entry = self._entries.get(id(tensor))
        if entry is None:
            return default
        return entry[1]

    def __contains__(self, tensor):
        return id(tensor) in self._entries

    def __len__(self):
        return len(self._entries)

    def items(self):
        return list(self._entries.values())


_TAPE_SERIAL = itertools.count(1)


class Tape(object):
    """
    Ordered record of primitive operations. Recording order is a topological
    order, so backward() is a single reverse sweep. A tape can run backward()
    once; reset() clears it for reuse.
    """

    def __init__(self):
        self.nodes = []
        self._serial = next(_TAPE_SERIAL)
        self._spent = False

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def reset(self):
        self.nodes = []
        self._serial = next(_TAPE_SERIAL)
        self._spent = False

    def owns(self, tensor):
        tid = tensor.tape_id
        return (tid is not None and tid[0] == self._serial
                and tid[1] < len(self.nodes) and self.nodes[tid[1]].out is tensor)

    def record(self, out, parents, vjp):
        if self._spent:
            raise TapeError('cannot record on a tape after backward(); reset() it first')
        out.tape_id = (self._serial, len(self.nodes))
        self.nodes.append(_Node(out, parents, vjp))

    def backward(self, loss):
        if self._spent:
            raise TapeError('backward() already ran on this tape; reset() before reuse')
        if not isinstance(loss, Tensor) or loss.size != 1:
            raise TapeError('loss must be a scalar tensor, got shape {0}'.format(
                getattr(loss, 'shape', None)))
        if not self.owns(loss):
            raise TapeError('loss is detached from this tape')
        grads = {id(loss): np.ones_like(loss.data)}
        leaves = GradientMap()
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if self.owns(parent):
                    key = id(parent)
                    if key in grads:
                        grads[key] = grads[key] + pg
                    else:
                        grads[key] = pg
                else:
                    leaves.accumulate(parent, pg)
        self._spent = True
        for leaf, g in leaves.items():
            leaf.grad = g if leaf.grad is None else leaf.grad + g
        logger.debug('backward over %d nodes reached %d leaves', len(self.nodes), len(leaves))
        return leaves


def record_op(data, parents, vjp):
    out = Tensor._wrap(data)
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape.record(out, tuple(parents), vjp)
    return out


def unbroadcast(g, shape):
    "sum g over the axes that broadcasting expanded to reach g.shape from shape"
    if g.shape == tuple(shape):
        return g
    lead = g.ndim - len(shape)
    if lead > 0:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError('{0}: shapes {1} and {2} do not broadcast'.format(op, a.shape, b.shape))


# elementwise arithmetic

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape('add', a, b)
    return record_op(a.data + b.data, (a, b),
                   lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape('sub', a, b)
    return record_op(a.data - b.data, (a, b),
                   lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape('mul', a, b)
    return record_op(a.data * b.data, (a, b),
                   lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape('div', a, b)
    out = a.data / b.data

    def vjp(g):
        gb = -g * out / b.data
        return unbroadcast(g / b.data, a.shape), unbroadcast(gb, b.shape)
    return record_op(out, (a, b), vjp)


def neg(a):
    a = as_tensor(a)
    return record_op(-a.data, (a,), lambda g: (-g,))


def exp(a):
    out = np.exp(a.data)
    return record_op(out, (a,), lambda g: (g * out,))


def log(a):
    return record_op(np.log(a.data), (a,), lambda g: (g / a.data,))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a):
    s = _sigmoid(a.data)
    return record_op(s, (a,), lambda g: (g * s * (1.0 - s),))


def swish(a):
    s = _sigmoid(a.data)
    out = a.data * s
    return record_op(out, (a,), lambda g: (g * (s + a.data * s * (1.0 - s)),))


def relu(a):
    pos = a.data > 0
    return record_op(np.where(pos, a.data, 0.0).astype(a.data.dtype), (a,),
                   lambda g: (np.where(pos, g, 0.0).astype(g.dtype),))


def glu(a, axis=-1):
    "first half times sigmoid of the second half along axis"
    n = a.shape[axis]
    if n % 2:
        raise ShapeError('glu: axis {0} of shape {1} has odd extent'.format(axis, a.shape))
    first, second = np.split(a.data, 2, axis=axis)
    s = _sigmoid(second)

    def vjp(g):
        return (np.concatenate([g * s, g * first * s * (1.0 - s)], axis=axis),)
    return record_op(first * s, (a,), vjp)


def dropout(a, rate, training, rng):
    "inverted dropout; identity (and unrecorded) outside training"
    if not 0.0 <= rate < 1.0:
        raise ValueError('dropout rate must lie in [0, 1), got {0!r}'.format(rate))
    if not training or rate == 0.0:
        return a
    keep = (rng.random(a.shape) >= rate).astype(a.data.dtype) / (1.0 - rate)
    return record_op(a.data * keep, (a,), lambda g: (g * keep,))


# linear algebra

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError('matmul: cannot multiply {0} by {1}'.format(a.shape, b.shape))
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError('matmul: batch extents of {0} and {1} do not broadcast'.format(a.shape, b.shape))

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)
    return record_op(np.matmul(a.data, b.data), (a, b), vjp)


def linear(x, weight, bias=None):
    "x @ weight + bias with weight shaped (in, out)"
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError('linear: input {0} does not match weight {1}'.format(x.shape, weight.shape))
    lead = x.shape[:-1]
    flat = reshape(x, (-1, x.shape[-1]))
    out = matmul(flat, weight)
    if bias is not None:
        out = add(out, bias)
    return reshape(out, lead + (weight.shape[1],))


# reductions and normalization

def sum(a, axis=None, keepdims=False):
    shape = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)
    return record_op(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), vjp)


def mean(a, axis=None, keepdims=False):
    if axis is None:
        n = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[i] for i in axes]))
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def softmax(a, axis=-1):
    z = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def vjp(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)
    return record_op(out, (a,), vjp)


def log_softmax(a, axis=-1):
    z = a.data - np.max(a.data, axis=axis, keepdims=True)
    out = z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))

    def vjp(g):
        return (g - np.exp(out) * np.sum(g, axis=axis, keepdims=True),)
    return record_op(out, (a,), vjp)


def layernorm(x, gain, bias, eps=1e-5):
    "normalize over the last axis, then scale by gain and shift by bias"
    if eps <= 0:
        raise ValueError('layernorm eps must be positive, got {0!r}'.format(eps))
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise ShapeError('layernorm: input {0} with gain {1} and bias {2}'.format(
            x.shape, gain.shape, bias.shape))
    mu = np.mean(x.data, axis=-1, keepdims=True)
    xc = x.data - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def vjp(g):
        gh = g * gain.data
        gx = inv * (gh - np.mean(gh, axis=-1, keepdims=True)
                    - xhat * np.mean(gh * xhat, axis=-1, keepdims=True))
        return gx, unbroadcast(g * xhat, gain.shape), unbroadcast(g, bias.shape)
    return record_op(out, (x, gain, bias), vjp)


# shape manipulation

def reshape(a, shape):
    shape = tuple(shape)
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError('reshape: cannot view {0} as {1}'.format(src, shape))
    return record_op(out, (a,), lambda g: (g.reshape(src),))


def transpose(a, axes=None):
    if axes is None or len(axes) == 0:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return record_op(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def swapaxes(a, i, j):
    axes = list(range(a.ndim))
    axes[i], axes[j] = axes[j], axes[i]
    return transpose(a, axes)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError('concat: shapes {0} do not agree off axis {1}'.format(
            [t.shape for t in tensors], axis))
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))
    return record_op(out, tuple(tensors), vjp)


def getitem(a, key):
    shape = a.shape

    def vjp(g):
        z = np.zeros(shape, dtype=g.dtype)
        np.add.at(z, key, g)
        return (z,)
    return record_op(a.data[key], (a,), vjp)


def pad(a, widths):
    "zero padding; widths is one (before, after) pair per axis"
    widths = tuple((int(lo), int(hi)) for lo, hi in widths)
    if len(widths) != a.ndim:
        raise ShapeError('pad: {0} width pairs for shape {1}'.format(len(widths), a.shape))
    key = tuple(slice(lo, lo + n) for (lo, _), n in zip(widths, a.shape))
    return record_op(np.pad(a.data, widths), (a,), lambda g: (g[key],))


def masked_fill(a, mask, value):
    "replace entries where mask is True; mask must broadcast to a's shape"
    mask = np.asarray(mask, dtype=bool)
    if np.broadcast_shapes(mask.shape, a.shape) != a.shape:
        raise ShapeError('masked_fill: mask {0} does not broadcast to {1}'.format(mask.shape, a.shape))
    out = np.where(mask, np.asarray(value, dtype=a.data.dtype), a.data)
    return record_op(out, (a,), lambda g: (np.where(mask, 0.0, g).astype(g.dtype),))


# convolutions

def conv1d_depthwise(x, weight, bias=None, stride=1):
    """
    Depthwise convolution over the time axis of x (batch, time, channels)
    with weight (kernel, channels). "Same" padding; output length is
    (T - 1) // stride + 1.
    """
    if x.ndim != 3 or weight.ndim != 2 or weight.shape[1] != x.shape[2]:
        raise ShapeError('conv1d_depthwise: input {0} with weight {1}'.format(x.shape, weight.shape))
    if stride not in (1, 2):
        raise ValueError('conv1d_depthwise stride must be 1 or 2, got {0!r}'.format(stride))
    k = weight.shape[0]
    t = x.shape[1]
    left = (k - 1) // 2
    right = k - 1 - left
    xp = np.pad(x.data, ((0, 0), (left, right), (0, 0)))
    win = sliding_window_view(xp, k, axis=1)[:, ::stride]   # (B, T_out, C, K)
    out = np.einsum('btck,kc->btc', win, weight.data)
    t_out = out.shape[1]
    parents = (x, weight)
    if bias is not None:
        out = out + bias.data
        parents = parents + (bias,)

    def vjp(g):
        gw = np.einsum('btck,btc->kc', win, g)
        gxp = np.zeros_like(xp)
        span = stride * (t_out - 1) + 1
        for i in range(k):
            gxp[:, i:i + span:stride] += g * weight.data[i]
        grads = (gxp[:, left:left + t], gw)
        if bias is not None:
            grads = grads + (g.sum(axis=(0, 1)),)
        return grads
    return record_op(out, parents, vjp)


def _convnd(x, weight, bias, stride, padding, nd):
    """
    Dense convolution of x (batch, in_ch, *spatial) with weight
    (out_ch, in_ch, *kernel) over nd spatial axes.
    """
    if x.ndim != nd + 2 or weight.ndim != nd + 2 or weight.shape[1] != x.shape[1]:
        raise ShapeError('conv{0}d: input {1} with weight {2}'.format(nd, x.shape, weight.shape))
    kernel = weight.shape[2:]
    stride = tuple(stride)
    padding = tuple(padding)
    spatial = x.shape[2:]
    xp = np.pad(x.data, ((0, 0), (0, 0)) + tuple((p, p) for p in padding))
    if any(xp.shape[2 + i] < kernel[i] for i in range(nd)):
        raise ShapeError('conv{0}d: kernel {1} exceeds padded input {2}'.format(nd, kernel, xp.shape))
    axes = tuple(range(2, 2 + nd))
    win = sliding_window_view(xp, kernel, axis=axes)
    win = win[(slice(None), slice(None)) + tuple(slice(None, None, s) for s in stride)]
    out_spatial = win.shape[2:2 + nd]
    # win: (B, Cin, *out, *kernel); contract Cin and kernel axes
    win_axes = [1] + list(range(2 + nd, 2 + 2 * nd))
    w_axes = [1] + list(range(2, 2 + nd))
    out = np.tensordot(win, weight.data, axes=(win_axes, w_axes))   # (B, *out, Cout)
    out = np.moveaxis(out, -1, 1)
    parents = (x, weight)
    if bias is not None:
        out = out + bias.data.reshape((1, -1) + (1,) * nd)
        parents = parents + (bias,)

    def vjp(g):
        g_axes = [0] + list(range(2, 2 + nd))
        gw = np.tensordot(g, win, axes=(g_axes, [0] + list(range(2, 2 + nd))))   # (Cout, Cin, *kernel)
        cols = np.tensordot(g, weight.data, axes=([1], [0]))   # (B, *out, Cin, *kernel)
        gxp = np.zeros_like(xp)
        for offs in itertools.product(*[range(k) for k in kernel]):
            dst = (slice(None), slice(None)) + tuple(
                slice(o, o + s * (n - 1) + 1, s) for o, s, n in zip(offs, stride, out_spatial))
            piece = cols[(slice(None),) + (slice(None),) * nd + (slice(None),) + offs]
            gxp[dst] += np.moveaxis(piece, -1, 1)
        crop = (slice(None), slice(None)) + tuple(slice(p, p + n) for p, n in zip(padding, spatial))
        grads = (gxp[crop], gw)
        if bias is not None:
            grads = grads + (g.sum(axis=(0,) + tuple(range(2, 2 + nd))),)
        return grads
    return record_op(out, parents, vjp)


def conv2d(x, weight, bias=None, stride=(1, 1), padding=(0, 0)):
    return _convnd(x, weight, bias, stride, padding, 2)


def conv3d(x, weight, bias=None, stride=(1, 1, 1), padding=(0, 0, 0)):
    return _convnd(x, weight, bias, stride, padding, 3)
