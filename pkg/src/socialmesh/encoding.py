"""Canonical binary encoding for every signed or stored record.

Layout: a 1-byte type tag, then the fields in declaration order.  Integers
are fixed-width big-endian (u8, u64, 20-byte node ids); byte strings and
UTF-8 strings carry a 4-byte big-endian length prefix; lists carry a 4-byte
count prefix; optional records carry a 1-byte presence flag.  Nested
records are encoded with their own tag.
"""

from __future__ import annotations

import dataclasses
import struct
from typing import Any

from .errors import DecodeError, StringTooLong

U8 = "u8"
U64 = "u64"
NODE = "node"
BYTES = "bytes"
STR = "str"
STRS = "strs"

NODE_WIDTH = 20
MAX_FIELD_LEN = 2**32 - 1

_BY_TAG: dict[int, type] = {}


def rec(cls):
    return ("rec", cls)


def list_of(cls):
    return ("list", cls)


def optional(cls):
    return ("opt", cls)


def enum(cls):
    return ("enum", cls)


def record(tag: int, schema: tuple):
    """Class decorator registering a dataclass as a canonical record."""

    def deco(cls):
        names = tuple(f.name for f in dataclasses.fields(cls))
        if names != tuple(n for n, _ in schema):
            raise TypeError(f"{cls.__name__}: schema order {schema} does not match fields {names}")
        if tag in _BY_TAG:
            raise TypeError(f"tag {tag:#x} already used by {_BY_TAG[tag].__name__}")
        cls._tag = tag
        cls._schema = schema
        _BY_TAG[tag] = cls
        return cls

    return deco


def _len_prefix(n: int) -> bytes:
    if n > MAX_FIELD_LEN:
        raise StringTooLong(f"length {n} exceeds {MAX_FIELD_LEN}")
    return struct.pack(">I", n)


def _encode_value(kind, value, out: bytearray) -> None:
    if kind == U8:
        if not 0 <= value < 256:
            raise ValueError(f"u8 out of range: {value}")
        out.append(value)
    elif kind == U64:
        if not isinstance(value, int) or not 0 <= value < 2**64:
            raise ValueError(f"u64 out of range: {value!r}")
        out += struct.pack(">Q", value)
    elif kind == NODE:
        if not 0 <= value < 2 ** (8 * NODE_WIDTH):
            raise ValueError(f"node id out of range: {value}")
        out += value.to_bytes(NODE_WIDTH, "big")
    elif kind == BYTES:
        out += _len_prefix(len(value))
        out += value
    elif kind == STR:
        raw = value.encode("utf-8")
        out += _len_prefix(len(raw))
        out += raw
    elif kind == STRS:
        out += _len_prefix(len(value))
        for s in value:
            _encode_value(STR, s, out)
    elif kind[0] == "rec":
        _encode_record(value, out)
    elif kind[0] == "list":
        out += _len_prefix(len(value))
        for item in value:
            _encode_record(item, out)
    elif kind[0] == "opt":
        if value is None:
            out.append(0)
        else:
            out.append(1)
            _encode_record(value, out)
    elif kind[0] == "enum":
        out.append(int(value))
    else:  # pragma: no cover
        raise TypeError(f"unknown field kind {kind!r}")


def _encode_record(obj, out: bytearray) -> None:
    out.append(obj._tag)
    for name, kind in obj._schema:
        _encode_value(kind, getattr(obj, name), out)


def canonical_bytes(obj) -> bytes:
    if not hasattr(obj, "_tag"):
        raise TypeError(f"{type(obj).__name__} is not a canonical record")
    out = bytearray()
    _encode_record(obj, out)
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DecodeError("truncated input")
        chunk = bytes(self.data[self.pos : self.pos + n])
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]


def _decode_value(kind, r: _Reader) -> Any:
    if kind == U8:
        return r.take(1)[0]
    if kind == U64:
        return struct.unpack(">Q", r.take(8))[0]
    if kind == NODE:
        return int.from_bytes(r.take(NODE_WIDTH), "big")
    if kind == BYTES:
        return r.take(r.u32())
    if kind == STR:
        try:
            return r.take(r.u32()).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError("invalid utf-8") from exc
    if kind == STRS:
        return tuple(_decode_value(STR, r) for _ in range(r.u32()))
    if kind[0] == "rec":
        return _decode_record(r, kind[1])
    if kind[0] == "list":
        return tuple(_decode_record(r, kind[1]) for _ in range(r.u32()))
    if kind[0] == "opt":
        flag = r.take(1)[0]
        if flag == 0:
            return None
        if flag != 1:
            raise DecodeError("bad presence flag")
        return _decode_record(r, kind[1])
    if kind[0] == "enum":
        raw = r.take(1)[0]
        try:
            return kind[1](raw)
        except ValueError as exc:
            raise DecodeError(f"bad {kind[1].__name__} value {raw}") from exc
    raise TypeError(f"unknown field kind {kind!r}")  # pragma: no cover


def _decode_record(r: _Reader, expected=None):
    tag = r.take(1)[0]
    cls = _BY_TAG.get(tag)
    if cls is None:
        raise DecodeError(f"unknown record tag {tag:#x}")
    if expected is not None and cls is not expected:
        raise DecodeError(f"expected {expected.__name__}, found {cls.__name__}")
    values = {name: _decode_value(kind, r) for name, kind in cls._schema}
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise DecodeError(str(exc)) from exc


def decode(data: bytes, expected=None):
    """Decode one complete record; trailing bytes are an error."""
    r = _Reader(data)
    obj = _decode_record(r, expected)
    if r.pos != len(r.data):
        raise DecodeError("trailing bytes after record")
    return obj


def try_decode(data: bytes, expected=None):
    try:
        return decode(data, expected)
    except DecodeError:
        return None


def registered_types() -> dict[int, type]:
    return dict(_BY_TAG)
