#!python
# -*- Python -*-
"""
The subset of RFC 7049 CBOR the checkpoint manifest needs: unsigned and
negative integers, byte and text strings, arrays, maps, float64, booleans
and null. Definite and indefinite-length containers are both read; tags are
returned as Tag objects without interpretation.
"""

import struct
from io import BytesIO


CBOR_TYPE_MASK = 0xE0  # top 3 bits
CBOR_INFO_BITS = 0x1F  # low 5 bits

CBOR_UINT = 0x00
CBOR_NEGINT = 0x20
CBOR_BYTES = 0x40
CBOR_TEXT = 0x60
CBOR_ARRAY = 0x80
CBOR_MAP = 0xA0
CBOR_TAG = 0xC0
CBOR_7 = 0xE0  # float and other types

CBOR_UINT8_FOLLOWS = 24  # 0x18
CBOR_UINT16_FOLLOWS = 25  # 0x19
CBOR_UINT32_FOLLOWS = 26  # 0x1a
CBOR_UINT64_FOLLOWS = 27  # 0x1b
CBOR_VAR_FOLLOWS = 31  # 0x1f

CBOR_BREAK = 0xFF

CBOR_FALSE = (CBOR_7 | 20)
CBOR_TRUE = (CBOR_7 | 21)
CBOR_NULL = (CBOR_7 | 22)
CBOR_UNDEFINED = (CBOR_7 | 23)

CBOR_FLOAT16 = (CBOR_7 | 25)
CBOR_FLOAT32 = (CBOR_7 | 26)
CBOR_FLOAT64 = (CBOR_7 | 27)

_MAX_DEPTH = 100


class Tag(object):
    def __init__(self, tag=None, value=None):
        self.tag = tag
        self.value = value

    def __repr__(self):
        return "Tag({0!r}, {1!r})".format(self.tag, self.value)

    def __eq__(self, other):
        if not isinstance(other, Tag):
            return False
        return (self.tag == other.tag) and (self.value == other.value)


def _encode_type_num(cbor_type, val):
    """For some CBOR primary type [0..7] and an auxiliary unsigned number, return CBOR encoded bytes"""
    if val < 0:
        raise ValueError("negative auxiliary number {0!r}".format(val))
    if val <= 23:
        return struct.pack('B', cbor_type | val)
    if val <= 0x0ff:
        return struct.pack('BB', cbor_type | CBOR_UINT8_FOLLOWS, val)
    if val <= 0x0ffff:
        return struct.pack('!BH', cbor_type | CBOR_UINT16_FOLLOWS, val)
    if val <= 0x0ffffffff:
        return struct.pack('!BI', cbor_type | CBOR_UINT32_FOLLOWS, val)
    if val <= 0x0ffffffffffffffff:
        return struct.pack('!BQ', cbor_type | CBOR_UINT64_FOLLOWS, val)
    raise ValueError("value too big for a 64-bit CBOR number: {0!r}".format(val))


def dumps_int(val):
    "return bytes representing int val in CBOR"
    if val >= 0:
        return _encode_type_num(CBOR_UINT, val)
    return _encode_type_num(CBOR_NEGINT, -1 - val)


def dumps_float(val):
    return struct.pack("!Bd", CBOR_FLOAT64, val)


def dumps_string(val):
    if isinstance(val, str):
        val = val.encode('utf8')
        return _encode_type_num(CBOR_TEXT, len(val)) + val
    return _encode_type_num(CBOR_BYTES, len(val)) + bytes(val)


def dumps_array(arr, sort_keys=False):
    head = _encode_type_num(CBOR_ARRAY, len(arr))
    parts = [dumps(x, sort_keys=sort_keys) for x in arr]
    return head + b''.join(parts)


def dumps_dict(d, sort_keys=False):
    parts = [_encode_type_num(CBOR_MAP, len(d))]
    keys = sorted(d.keys()) if sort_keys else d.keys()
    for k in keys:
        parts.append(dumps(k, sort_keys=sort_keys))
        parts.append(dumps(d[k], sort_keys=sort_keys))
    return b''.join(parts)


def dumps_bool(b):
    if b:
        return struct.pack('B', CBOR_TRUE)
    return struct.pack('B', CBOR_FALSE)


def dumps_tag(t, sort_keys=False):
    return _encode_type_num(CBOR_TAG, t.tag) + dumps(t.value, sort_keys=sort_keys)


def dumps(ob, sort_keys=False):
    if ob is None:
        return struct.pack('B', CBOR_NULL)
    if isinstance(ob, bool):
        return dumps_bool(ob)
    if isinstance(ob, (str, bytes, bytearray)):
        return dumps_string(ob)
    if isinstance(ob, (list, tuple)):
        return dumps_array(ob, sort_keys=sort_keys)
    if isinstance(ob, dict):
        return dumps_dict(ob, sort_keys=sort_keys)
    if isinstance(ob, float):
        return dumps_float(ob)
    if isinstance(ob, int):
        return dumps_int(ob)
    if isinstance(ob, Tag):
        return dumps_tag(ob, sort_keys=sort_keys)
    # numpy scalars and the like
    if hasattr(ob, 'item'):
        return dumps(ob.item(), sort_keys=sort_keys)
    raise TypeError("don't know how to cbor serialize object of type {0}".format(type(ob)))


def dump(obj, fp, sort_keys=False):
    """
    obj: Python object to serialize
    fp: file-like object capable of .write(bytes)
    """
    fp.write(dumps(obj, sort_keys=sort_keys))


def loads(data):
    """
    Parse CBOR bytes and return Python objects.
    """
    if data is None:
        raise ValueError("got None for buffer to decode in loads")
    return _loads(BytesIO(data))[0]


def load(fp):
    """
    Parse and return object from fp, a file-like object supporting .read(n)
    """
    return _loads(fp)[0]


def _read_exact(fp, n):
    data = fp.read(n)
    if len(data) != n:
        raise EOFError("wanted {0} bytes, got {1}".format(n, len(data)))
    return data


def _read_byte(fp):
    tb = fp.read(1)
    if len(tb) == 0:
        raise EOFError()
    return ord(tb)


def _tag_aux(fp, tb):
    bytes_read = 1
    tag = tb & CBOR_TYPE_MASK
    tag_aux = tb & CBOR_INFO_BITS
    if tag_aux <= 23:
        aux = tag_aux
    elif tag_aux == CBOR_UINT8_FOLLOWS:
        aux = struct.unpack("!B", _read_exact(fp, 1))[0]
        bytes_read += 1
    elif tag_aux == CBOR_UINT16_FOLLOWS:
        aux = struct.unpack("!H", _read_exact(fp, 2))[0]
        bytes_read += 2
    elif tag_aux == CBOR_UINT32_FOLLOWS:
        aux = struct.unpack("!I", _read_exact(fp, 4))[0]
        bytes_read += 4
    elif tag_aux == CBOR_UINT64_FOLLOWS:
        aux = struct.unpack("!Q", _read_exact(fp, 8))[0]
        bytes_read += 8
    elif tag_aux == CBOR_VAR_FOLLOWS:
        aux = None
    else:
        raise ValueError("bogus tag {0:02x}".format(tb))
    return tag, tag_aux, aux, bytes_read


def _loads(fp, depth=0):
    "return (object, bytes read)"
    if depth > _MAX_DEPTH:
        raise ValueError("hit CBOR loads recursion depth limit")
    return _loads_tb(fp, _read_byte(fp), depth)


def _loads_array(fp, depth, aux, bytes_read):
    ob = []
    if aux is None:
        tb = _read_byte(fp)
        while tb != CBOR_BREAK:
            subob, sub_len = _loads_tb(fp, tb, depth + 1)
            bytes_read += sub_len
            ob.append(subob)
            tb = _read_byte(fp)
        return ob, bytes_read + 1
    for _ in range(aux):
        subob, sub_len = _loads(fp, depth + 1)
        bytes_read += sub_len
        ob.append(subob)
    return ob, bytes_read


def _loads_map(fp, depth, aux, bytes_read):
    ob = {}
    if aux is None:
        tb = _read_byte(fp)
        while tb != CBOR_BREAK:
            subk, sub_len = _loads_tb(fp, tb, depth + 1)
            bytes_read += sub_len
            subv, sub_len = _loads(fp, depth + 1)
            bytes_read += sub_len
            ob[subk] = subv
            tb = _read_byte(fp)
        return ob, bytes_read + 1
    for _ in range(aux):
        subk, sub_len = _loads(fp, depth + 1)
        bytes_read += sub_len
        subv, sub_len = _loads(fp, depth + 1)
        bytes_read += sub_len
        ob[subk] = subv
    return ob, bytes_read


def loads_bytes(fp, aux, btag=CBOR_BYTES):
    if aux is not None:
        return _read_exact(fp, aux), aux
    chunklist = []
    total_bytes_read = 0
    while True:
        tb = _read_byte(fp)
        if tb == CBOR_BREAK:
            total_bytes_read += 1
            break
        tag, tag_aux, aux, bytes_read = _tag_aux(fp, tb)
        if tag != btag or aux is None:
            raise ValueError('variable length value contains unexpected component')
        chunklist.append(_read_exact(fp, aux))
        total_bytes_read += bytes_read + aux
    return b''.join(chunklist), total_bytes_read


def _half_to_float(data):
    hibyte, lowbyte = struct.unpack("BB", data)
    exp = (hibyte >> 2) & 0x1F
    mant = ((hibyte & 0x03) << 8) | lowbyte
    if exp == 0:
        val = mant * (2.0 ** -24)
    elif exp == 31:
        val = float('Inf') if mant == 0 else float('NaN')
    else:
        val = (mant + 1024.0) * (2 ** (exp - 25))
    if hibyte & 0x80:
        val = -1.0 * val
    return val


def _loads_tb(fp, tb, depth=0):
    if tb == CBOR_FLOAT16:
        return _half_to_float(_read_exact(fp, 2)), 3
    elif tb == CBOR_FLOAT32:
        return struct.unpack("!f", _read_exact(fp, 4))[0], 5
    elif tb == CBOR_FLOAT64:
        return struct.unpack("!d", _read_exact(fp, 8))[0], 9

    tag, tag_aux, aux, bytes_read = _tag_aux(fp, tb)

    if tag == CBOR_UINT:
        return aux, bytes_read
    elif tag == CBOR_NEGINT:
        return -1 - aux, bytes_read
    elif tag == CBOR_BYTES:
        ob, subpos = loads_bytes(fp, aux)
        return ob, bytes_read + subpos
    elif tag == CBOR_TEXT:
        raw, subpos = loads_bytes(fp, aux, btag=CBOR_TEXT)
        return raw.decode('utf8'), bytes_read + subpos
    elif tag == CBOR_ARRAY:
        return _loads_array(fp, depth, aux, bytes_read)
    elif tag == CBOR_MAP:
        return _loads_map(fp, depth, aux, bytes_read)
    elif tag == CBOR_TAG:
        ob, subpos = _loads(fp, depth + 1)
        return Tag(aux, ob), bytes_read + subpos
    if tb == CBOR_TRUE:
        return True, bytes_read
    if tb == CBOR_FALSE:
        return False, bytes_read
    if tb in (CBOR_NULL, CBOR_UNDEFINED):
        return None, bytes_read
    raise ValueError("unknown cbor tag 7 byte: {0:02x}".format(tb))
