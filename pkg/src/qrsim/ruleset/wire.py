"""Canonical binary encoding of RuleSets.

Layout::

    magic "RSET" | version u16 | body length u32 | body | crc32(body) u32

Strings are u16-length-prefixed UTF-8, reals are big-endian f64, durations
u64.  Every clause starts with a one-byte tag.  The trailing CRC makes any
single corrupted byte a decode error instead of a different RuleSet.
"""

from __future__ import annotations

import struct
import zlib
from typing import List, Tuple

from .model import (BASES, CIRCUITS, CMP_OPS, MESSAGE_KINDS, Cmp, Free, Meas, Promote, QCirc, Res,
                    Rule, RuleSet, Send, SetTimer, SetVar, Stage, Timer)

MAGIC = b"RSET"
VERSION = 1

# condition tags
T_CMP, T_TIMER, T_RES = 0x01, 0x02, 0x03
# action tags
T_SETTIMER, T_PROMOTE, T_FREE, T_SET, T_MEAS, T_QCIRC, T_SEND = 0x10, 0x11, 0x12, 0x13, 0x14, 0x15, 0x16


class DecodeError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class _Writer:
    def __init__(self) -> None:
        self.parts: List[bytes] = []

    def u8(self, v: int) -> None:
        self.parts.append(struct.pack(">B", v))

    def u16(self, v: int) -> None:
        self.parts.append(struct.pack(">H", v))

    def u32(self, v: int) -> None:
        self.parts.append(struct.pack(">I", v))

    def u64(self, v: int) -> None:
        self.parts.append(struct.pack(">Q", v))

    def f64(self, v: float) -> None:
        self.parts.append(struct.pack(">d", v))

    def s(self, v: str) -> None:
        b = v.encode("utf-8")
        self.u16(len(b))
        self.parts.append(b)

    def refs(self, refs: Tuple[int, ...]) -> None:
        self.u8(len(refs))
        for r in refs:
            self.u8(r)

    def getvalue(self) -> bytes:
        return b"".join(self.parts)


class _Reader:
    def __init__(self, data: bytes, base: int):
        self.data = data
        self.pos = 0
        self.base = base

    def _take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise DecodeError(f"truncated {what}", self.base + self.pos)
        b = self.data[self.pos:self.pos + n]
        self.pos += n
        return b

    def u8(self, what="u8") -> int:
        return self._take(1, what)[0]

    def u16(self, what="u16") -> int:
        return struct.unpack(">H", self._take(2, what))[0]

    def u32(self, what="u32") -> int:
        return struct.unpack(">I", self._take(4, what))[0]

    def u64(self, what="u64") -> int:
        return struct.unpack(">Q", self._take(8, what))[0]

    def f64(self, what="f64") -> float:
        return struct.unpack(">d", self._take(8, what))[0]

    def s(self, what="string") -> str:
        n = self.u16(what)
        at = self.pos
        raw = self._take(n, what)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError:
            raise DecodeError(f"invalid utf-8 in {what}", self.base + at) from None

    def refs(self) -> Tuple[int, ...]:
        n = self.u8("ref count")
        return tuple(self.u8("ref") for _ in range(n))

    def enum(self, table, what) -> str:
        at = self.pos
        i = self.u8(what)
        if i >= len(table):
            raise DecodeError(f"unknown {what} {i}", self.base + at)
        return table[i]


def encode_ruleset(rs: RuleSet) -> bytes:
    w = _Writer()
    w.s(rs.ruleset_id)
    w.s(rs.connection_id)
    w.s(rs.owner_node)
    w.u16(rs.layer)
    w.u16(len(rs.stages))
    for st in rs.stages:
        w.u16(st.stage_id)
        w.u16(len(st.variables))
        for name, value in st.variables:
            w.s(name)
            w.f64(value)
        w.u16(len(st.rules))
        for rule in st.rules:
            w.u16(rule.rule_id)
            w.s(rule.name)
            w.u8(len(rule.conditions))
            for c in rule.conditions:
                _encode_condition(w, c)
            w.u8(len(rule.actions))
            for a in rule.actions:
                _encode_action(w, a)
    body = w.getvalue()
    return (MAGIC + struct.pack(">HI", VERSION, len(body)) + body
            + struct.pack(">I", zlib.crc32(body) & 0xFFFFFFFF))


def _encode_condition(w: _Writer, c) -> None:
    if isinstance(c, Cmp):
        w.u8(T_CMP)
        w.s(c.variable)
        w.u8(CMP_OPS.index(c.op))
        w.f64(c.value)
    elif isinstance(c, Timer):
        w.u8(T_TIMER)
        w.s(c.timer_id)
    elif isinstance(c, Res):
        w.u8(T_RES)
        w.s(c.partner)
        w.f64(c.min_fidelity)
        w.u8(c.count)
    else:
        raise TypeError(f"not a condition clause: {c!r}")


def _encode_action(w: _Writer, a) -> None:
    if isinstance(a, SetTimer):
        w.u8(T_SETTIMER)
        w.s(a.timer_id)
        w.u64(a.duration)
    elif isinstance(a, Promote):
        w.u8(T_PROMOTE)
        w.refs(a.refs)
        w.u16(a.target_stage)
    elif isinstance(a, Free):
        w.u8(T_FREE)
        w.refs(a.refs)
    elif isinstance(a, SetVar):
        w.u8(T_SET)
        w.s(a.variable)
        w.f64(a.value)
        w.u8(1 if a.relative else 0)
    elif isinstance(a, Meas):
        w.u8(T_MEAS)
        w.refs(a.refs)
        w.u8(BASES.index(a.basis))
    elif isinstance(a, QCirc):
        w.u8(T_QCIRC)
        w.refs(a.refs)
        w.u8(CIRCUITS.index(a.circuit))
    elif isinstance(a, Send):
        w.u8(T_SEND)
        w.u8(MESSAGE_KINDS.index(a.kind))
        w.u8(a.ref)
        w.s(a.dest)
        w.u8(1 if a.with_correction else 0)
    else:
        raise TypeError(f"not an action clause: {a!r}")


def decode_ruleset(data: bytes) -> RuleSet:
    if len(data) < 10:
        raise DecodeError("truncated header", len(data))
    if data[:4] != MAGIC:
        raise DecodeError("bad magic", 0)
    version, length = struct.unpack(">HI", data[4:10])
    if version != VERSION:
        raise DecodeError(f"unknown version {version}", 4)
    if len(data) != 10 + length + 4:
        raise DecodeError(f"length mismatch: header says {length} body bytes", 6)
    body = data[10:10 + length]
    (crc,) = struct.unpack(">I", data[10 + length:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise DecodeError("checksum mismatch", 10 + length)
    r = _Reader(body, 10)
    rs_id = r.s("ruleset id")
    conn = r.s("connection id")
    owner = r.s("owner node")
    layer = r.u16("layer")
    stages = []
    for _ in range(r.u16("stage count")):
        sid = r.u16("stage id")
        variables = []
        for _ in range(r.u16("variable count")):
            variables.append((r.s("variable name"), r.f64("variable value")))
        rules = []
        for _ in range(r.u16("rule count")):
            rid = r.u16("rule id")
            name = r.s("rule name")
            conds = tuple(_decode_condition(r) for _ in range(r.u8("condition count")))
            acts = tuple(_decode_action(r) for _ in range(r.u8("action count")))
            rules.append(Rule(rid, conds, acts, name))
        stages.append(Stage(sid, tuple(rules), tuple(variables)))
    if r.pos != len(body):
        raise DecodeError("trailing bytes", 10 + r.pos)
    return RuleSet(rs_id, conn, owner, tuple(stages), layer)


def _decode_condition(r: _Reader):
    at = r.pos
    tag = r.u8("condition tag")
    if tag == T_CMP:
        return Cmp(r.s("variable"), r.enum(CMP_OPS, "comparison operator"), r.f64("value"))
    if tag == T_TIMER:
        return Timer(r.s("timer id"))
    if tag == T_RES:
        return Res(r.s("partner"), r.f64("min fidelity"), r.u8("count"))
    raise DecodeError(f"unknown condition clause kind 0x{tag:02x}", r.base + at)


def _decode_action(r: _Reader):
    at = r.pos
    tag = r.u8("action tag")
    if tag == T_SETTIMER:
        return SetTimer(r.s("timer id"), r.u64("duration"))
    if tag == T_PROMOTE:
        return Promote(r.refs(), r.u16("target stage"))
    if tag == T_FREE:
        return Free(r.refs())
    if tag == T_SET:
        name, value = r.s("variable"), r.f64("value")
        flag_at = r.pos
        flag = r.u8("relative flag")
        if flag > 1:
            raise DecodeError("bad relative flag", r.base + flag_at)
        return SetVar(name, value, bool(flag))
    if tag == T_MEAS:
        return Meas(r.refs(), r.enum(BASES, "basis"))
    if tag == T_QCIRC:
        return QCirc(r.refs(), r.enum(CIRCUITS, "circuit"))
    if tag == T_SEND:
        kind = r.enum(MESSAGE_KINDS, "message kind")
        ref = r.u8("ref")
        dest = r.s("destination")
        flag_at = r.pos
        flag = r.u8("correction flag")
        if flag > 1:
            raise DecodeError("bad correction flag", r.base + flag_at)
        return Send(kind, ref, dest, bool(flag))
    raise DecodeError(f"unknown action clause kind 0x{tag:02x}", r.base + at)
