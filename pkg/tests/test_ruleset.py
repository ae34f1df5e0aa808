import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qrsim.ruleset import (BASES, CIRCUITS, CMP_OPS, DELIVER_STAGE, MESSAGE_KINDS, Cmp, DecodeError,
                           Free, Meas, Promote, QCirc, Res, Rule, RuleSet, Send, SetTimer, SetVar,
                           Stage, Timer, decode_ruleset, dump_ruleset, encode_ruleset,
                           validate_ruleset)

text = st.text(max_size=12)
reals = st.floats(allow_nan=False)
refs = st.lists(st.integers(0, 7), max_size=3).map(tuple)
conditions = st.one_of(
    st.builds(Cmp, text, st.sampled_from(CMP_OPS), reals),
    st.builds(Timer, text),
    st.builds(Res, text, st.floats(0.25, 1.0), st.integers(1, 2)))
actions = st.one_of(
    st.builds(SetTimer, text, st.integers(0, 2**64 - 1)),
    st.builds(Promote, refs, st.integers(0, 0xFFFF)),
    st.builds(Free, refs),
    st.builds(SetVar, text, reals, st.booleans()),
    st.builds(Meas, refs, st.sampled_from(BASES)),
    st.builds(QCirc, refs, st.sampled_from(CIRCUITS)),
    st.builds(Send, st.sampled_from(MESSAGE_KINDS), st.integers(0, 255), text, st.booleans()))
rules = st.builds(Rule, st.integers(0, 0xFFFF), st.lists(conditions, max_size=4).map(tuple),
                  st.lists(actions, max_size=5).map(tuple), text)
stages = st.builds(Stage, st.integers(0, 0xFFFF), st.lists(rules, max_size=3).map(tuple),
                   st.lists(st.tuples(text, reals), max_size=3).map(tuple))
rulesets = st.builds(RuleSet, text, text, text, st.lists(stages, max_size=3).map(tuple),
                     st.integers(0, 0xFFFF))


@settings(max_examples=300)
@given(rulesets)
def test_wire_round_trip(rs):
    assert decode_ruleset(encode_ruleset(rs)) == rs


@settings(max_examples=300)
@given(rulesets, st.data())
def test_single_byte_corruption_is_an_error(rs, data):
    raw = bytearray(encode_ruleset(rs))
    i = data.draw(st.integers(0, len(raw) - 1))
    raw[i] ^= data.draw(st.integers(1, 255))
    try:
        out = decode_ruleset(bytes(raw))
    except DecodeError:
        return
    pytest.fail(f"corruption at byte {i} decoded to {out!r}")


@settings(max_examples=500)
@given(st.binary(max_size=200))
def test_random_bytes_never_crash(raw):
    try:
        decode_ruleset(raw)
    except DecodeError:
        pass


@given(rulesets, st.integers(0, 50))
def test_truncation_is_an_error(rs, cut):
    raw = encode_ruleset(rs)
    with pytest.raises(DecodeError):
        decode_ruleset(raw[:max(0, len(raw) - 1 - cut)])


def test_decode_error_offset():
    with pytest.raises(DecodeError) as exc:
        decode_ruleset(b"XXXX" + bytes(20))
    assert exc.value.offset == 0


def test_encoding_is_canonical():
    rs = _swapper()
    assert encode_ruleset(rs) == encode_ruleset(decode_ruleset(encode_ruleset(rs)))


def _swapper():
    swap = Rule(0, (Res("A", 0.8), Res("C", 0.8)),
                (QCirc((0, 1), "SWAP"), Send("UPDATE", 0, "A", True), Send("UPDATE", 1, "C", True),
                 Free((0, 1))), "swap")
    return RuleSet("rs-B", "c1", "B", (Stage(0, (swap,)),))


def test_valid_ruleset_has_no_violations():
    assert validate_ruleset(_swapper()) == []


@pytest.mark.parametrize("rule, kind", [
    (Rule(0, (Res("A", 0.8),), (Free((1,)),)), "bad reference"),
    (Rule(0, (Res("A", 0.8),), ()), "resource leak"),
    (Rule(0, (Res("A", 0.8),), (Free((0,)), Promote((0,), DELIVER_STAGE))), "double consumption"),
    (Rule(0, (Cmp("n", "LT", 3), Res("A", 0.8)), (Free((0,)),)), "undeclared variable"),
    (Rule(0, (Res("A", 0.8, 3),), (Free((0, 1, 2)),)), "bad RES count"),
    (Rule(0, (Res("A", 0.8),), (Promote((0,), 0),)), "backward promotion"),
    (Rule(0, (Res("A", 0.8),), (Promote((0,), 5),)), "unknown stage"),
    (Rule(0, (Res("A", 0.8),), (SetVar("n", 1), Free((0,)))), "undeclared variable"),
])
def test_violations(rule, kind):
    rs = RuleSet("r", "c", "B", (Stage(0, (rule,)),))
    assert kind in {v.kind for v in validate_ruleset(rs)}


def test_stage_numbering():
    rs = RuleSet("r", "c", "B", (Stage(1),))
    assert [v.kind for v in validate_ruleset(rs)] == ["stage numbering"]


def test_dump_mentions_every_clause():
    out = dump_ruleset(_swapper())
    assert out.startswith("ruleset id=rs-B connection=c1 node=B")
    assert out.count("      if ") == 2 and out.count("      do ") == 4
    assert "SWAP" in out


def test_cmp_ops():
    assert Cmp("x", "EQ", 1).holds(1) and not Cmp("x", "LT", 1).holds(1)
    assert Cmp("x", "LE", 1).holds(1) and Cmp("x", "GE", 1).holds(2) and Cmp("x", "GT", 1).holds(2)
