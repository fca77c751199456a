#!python
# -*- Python -*-
"""
Line-based config text: one `section.key = value` per line, '#' starts a
comment. Values are coerced to the type of the field they replace, so a
dataclass instance holding defaults is also the schema.

    audio.n_mels = 80
    visual.channels = 16, 32, 64, 128
    dcim.purification = false
"""

import dataclasses
import logging

from .errors import ConfigError


logger = logging.getLogger(__name__)

_FNV_OFFSET = 0xcbf29ce484222325
_FNV_PRIME = 0x100000001b3
_MASK64 = 0xffffffffffffffff

_TRUE = ('1', 'true', 'yes', 'on')
_FALSE = ('0', 'false', 'no', 'off')


def fnv1a_64(data):
    "64-bit FNV-1a hash of a bytes object"
    h = _FNV_OFFSET
    for byte in bytearray(data):
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


def format_value(v):
    if isinstance(v, bool):
        return 'true' if v else 'false'
    if isinstance(v, (tuple, list)):
        return ', '.join(format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return ''
    return str(v)


def scalar_fields(obj):
    "(name, value) for the dataclass fields of obj that are not themselves dataclasses"
    out = []
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if not dataclasses.is_dataclass(v):
            out.append((f.name, v))
    return out


def section_lines(section, obj):
    return ['{0}.{1} = {2}'.format(section, name, format_value(v)) for name, v in scalar_fields(obj)]


def dump_sections(sections):
    "sections maps section name -> dataclass instance; output is sorted"
    lines = []
    for name in sorted(sections):
        lines.extend(sorted(section_lines(name, sections[name])))
    return '\n'.join(lines) + '\n'


def _parse_scalar(text, current, where):
    if isinstance(current, bool):
        low = text.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ConfigError('{0}: expected a boolean, got {1!r}'.format(where, text))
    if isinstance(current, int):
        try:
            return int(text)
        except ValueError:
            raise ConfigError('{0}: expected an integer, got {1!r}'.format(where, text))
    if isinstance(current, float):
        try:
            return float(text)
        except ValueError:
            raise ConfigError('{0}: expected a number, got {1!r}'.format(where, text))
    return text


def parse_value(text, current, where='value'):
    "coerce text to the type of current"
    text = text.strip()
    if isinstance(current, (tuple, list)):
        if not text:
            return ()
        parts = [p.strip() for p in text.split(',')]
        sample = current[0] if len(current) else ''
        if isinstance(sample, int) and not isinstance(sample, bool) and any('.' in p for p in parts):
            sample = 0.0
        return tuple(_parse_scalar(p, sample, where) for p in parts)
    if current is None:
        return text or None
    return _parse_scalar(text, current, where)


def iter_lines(text, origin='<config>'):
    "yields (lineno, section, key, value text) for every assignment line"
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigError('{0}:{1}: expected "section.key = value", got {2!r}'.format(origin, lineno, raw))
        lhs, value = line.split('=', 1)
        lhs = lhs.strip()
        if lhs.count('.') != 1:
            raise ConfigError('{0}:{1}: key {2!r} must be section.key'.format(origin, lineno, lhs))
        section, key = lhs.split('.')
        yield lineno, section.strip(), key.strip(), value


def assign(sections, section, key, value_text, where):
    target = sections.get(section)
    if target is None:
        raise ConfigError('{0}: unknown section {1!r} (known: {2})'.format(
            where, section, ', '.join(sorted(sections))))
    names = dict(scalar_fields(target))
    if key not in names:
        raise ConfigError('{0}: unknown key {1}.{2}'.format(where, section, key))
    setattr(target, key, parse_value(value_text, names[key], where))


def apply_text(sections, text, origin='<config>'):
    "apply every line of text to the dataclass instances in sections"
    for lineno, section, key, value in iter_lines(text, origin):
        assign(sections, section, key, value, '{0}:{1}'.format(origin, lineno))
    return sections


def apply_override(sections, override):
    "apply one 'section.key=value' string, as given on a command line"
    if '=' not in override:
        raise ConfigError('override {0!r} must look like section.key=value'.format(override))
    lhs, value = override.split('=', 1)
    lhs = lhs.strip()
    if lhs.count('.') != 1:
        raise ConfigError('override key {0!r} must be section.key'.format(lhs))
    section, key = lhs.split('.')
    assign(sections, section, key, value, 'override')
    return sections
