#!python
# -*- Python -*-
"""
Checkpoint files.

    header    4s   magic b'DCIM'
              u32  format version (1)
              u64  FNV-1a digest of the canonical model config text
              u32  manifest length in bytes
    manifest  CBOR map {'variant', 'config', 'meta', 'entries': [{name, shape, offset}]}
    payload   little-endian float32 values; offsets count bytes from payload start

All header fields are little-endian. The same container holds optimizer
state (variant 'adam', entries 'm.<param>' and 'v.<param>').

Values are stored as float32, so a float64 model reloads bit-identically
only when its parameters already lie on the float32 grid; quantize() puts
them there.
"""

import logging
import os
import struct
from collections import OrderedDict

import numpy as np

from . import cbor
from .configtext import fnv1a_64
from .errors import (CorruptCheckpointError, IncompatibleCheckpointError,
                     TruncatedCheckpointError, UnsupportedVersionError)
from .model import ModelConfig, build


logger = logging.getLogger(__name__)

MAGIC = b'DCIM'
FORMAT_VERSION = 1
_HEADER = struct.Struct('<4sIQI')


def _digest(config_text):
    return fnv1a_64(config_text.encode('utf-8'))


def write_arrays(path, arrays, variant, config_text, meta=None):
    "write name -> array pairs (in order) with a manifest describing them"
    entries = []
    chunks = []
    offset = 0
    for name, arr in arrays.items():
        blob = np.ascontiguousarray(arr, dtype='<f4').tobytes()
        entries.append({'name': name, 'shape': list(np.shape(arr)), 'offset': offset})
        chunks.append(blob)
        offset += len(blob)
    manifest = cbor.dumps({'variant': variant, 'config': config_text, 'meta': meta or {},
                           'entries': entries}, sort_keys=True)
    tmp = path + '.tmp'
    with open(tmp, 'wb') as fp:
        fp.write(_HEADER.pack(MAGIC, FORMAT_VERSION, _digest(config_text), len(manifest)))
        fp.write(manifest)
        for blob in chunks:
            fp.write(blob)
    os.replace(tmp, path)
    logger.debug('wrote %d arrays (%d payload bytes) to %s', len(entries), offset, path)


class CheckpointData(object):
    def __init__(self, variant, config_text, digest, meta, arrays):
        self.variant = variant
        self.config_text = config_text
        self.digest = digest
        self.meta = meta
        self.arrays = arrays

    def __repr__(self):
        return 'CheckpointData(variant={0!r}, digest={1:016x}, {2} arrays)'.format(
            self.variant, self.digest, len(self.arrays))


def read_arrays(path):
    with open(path, 'rb') as fp:
        blob = fp.read()
    return parse(blob, path)


def parse(blob, origin='<checkpoint>'):
    if len(blob) < _HEADER.size:
        raise TruncatedCheckpointError('{0}: {1} bytes is shorter than the header'.format(origin, len(blob)))
    magic, version, digest, manifest_len = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise CorruptCheckpointError('{0}: bad magic {1!r}'.format(origin, magic))
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError('{0}: format version {1}, this reader handles {2}'.format(
            origin, version, FORMAT_VERSION))
    start = _HEADER.size
    if len(blob) < start + manifest_len:
        raise TruncatedCheckpointError('{0}: manifest cut short'.format(origin))
    try:
        manifest = cbor.loads(blob[start:start + manifest_len])
    except EOFError:
        raise TruncatedCheckpointError('{0}: manifest cut short'.format(origin))
    except (ValueError, UnicodeDecodeError) as e:
        raise CorruptCheckpointError('{0}: manifest does not decode: {1}'.format(origin, e))
    if not isinstance(manifest, dict) or 'entries' not in manifest or 'config' not in manifest:
        raise CorruptCheckpointError('{0}: manifest lacks entries or config'.format(origin))
    if _digest(manifest['config']) != digest:
        raise CorruptCheckpointError('{0}: header digest does not match the stored config'.format(origin))
    payload = blob[start + manifest_len:]
    arrays = OrderedDict()
    for entry in manifest['entries']:
        shape = tuple(entry['shape'])
        n = int(np.prod(shape)) if shape else 1
        lo = entry['offset']
        hi = lo + 4 * n
        if hi > len(payload):
            raise TruncatedCheckpointError('{0}: payload ends before {1!r} ({2} of {3} bytes)'.format(
                origin, entry['name'], len(payload), hi))
        arrays[entry['name']] = np.frombuffer(payload, dtype='<f4', count=n, offset=lo).reshape(shape)
    return CheckpointData(manifest.get('variant'), manifest['config'], digest, manifest.get('meta', {}), arrays)


def save(model, path, meta=None):
    try:
        write_arrays(path, model.state_dict(), model.variant, model.cfg.canonical_text(), meta)
    except (IOError, OSError):
        logger.error('could not write checkpoint %s', path, exc_info=True)
        raise
    logger.info('saved %s checkpoint (%d parameters) to %s', model.variant, model.param_count(), path)


def load_into(model, data, force=False):
    """
    Copy a checkpoint's arrays into model. A checkpoint built from another
    config is refused unless force, which copies only the names both sides
    hold with equal shapes. Returns the loaded names.
    """
    if isinstance(data, str):
        data = read_arrays(data)
    params = model.named_parameters()
    if data.digest != model.cfg.digest() or data.variant != model.variant:
        if not force:
            raise IncompatibleCheckpointError(
                'checkpoint is a {0} model with config digest {1:016x}; target is {2} with {3:016x}'.format(
                    data.variant, data.digest, model.variant, model.cfg.digest()))
        shared = [n for n in data.arrays if n in params and params[n].shape == data.arrays[n].shape]
        logger.warning('forced load maps %d of %d checkpoint arrays', len(shared), len(data.arrays))
        return model.load_state(OrderedDict((n, data.arrays[n]) for n in shared), strict=False)
    return model.load_state(data.arrays, strict=True)


def load(path, variant=None, seed=0):
    "rebuild the model a checkpoint was written from"
    data = read_arrays(path)
    cfg = ModelConfig.from_text(data.config_text)
    if cfg.digest() != data.digest:
        raise IncompatibleCheckpointError('{0}: stored config no longer reproduces its digest'.format(path))
    variant = variant or data.variant
    model = build(cfg, variant, seed=seed)
    load_into(model, data, force=variant != data.variant)
    logger.info('loaded %s model from %s', variant, path)
    return model


def warm_start(model, *paths):
    """
    Initialize model from pre-trained checkpoints by parameter name. Names
    absent from every checkpoint keep their initial values (zero-initialized
    adapter outputs in particular). Returns the set of names copied.
    """
    params = model.named_parameters()
    copied = set()
    for path in paths:
        if path is None:
            continue
        data = read_arrays(path)
        for name, arr in data.arrays.items():
            if name not in params:
                continue
            if params[name].shape != arr.shape:
                raise IncompatibleCheckpointError('{0}: {1!r} has shape {2}, model expects {3}'.format(
                    path, name, arr.shape, params[name].shape))
            params[name].assign(arr)
            copied.add(name)
        logger.info('warm start: %s (%s) initialized %d parameters', path, data.variant, len(copied))
    return copied


def quantize(model):
    "round every parameter to float32 precision, in place"
    for p in model.parameters():
        p.assign(p.data.astype(np.float32))
    return model
