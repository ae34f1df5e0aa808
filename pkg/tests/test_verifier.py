import pytest
from hypothesis import given, settings, strategies as st

from qrsim.connection import generate_rulesets, verify_rulesets, with_discard_timer, with_greedy_swaps
from qrsim.connection.verifier import (_add_clock, _canon, _constrain, _drop_clock, _subset, _up, INF,
                                       unpaired_messages, verification_key)
from qrsim.kernel import US
from qrsim.ruleset import Free, Res, Rule, RuleSet, Send, Stage

from test_generator import request


def rulesets(n, **kw):
    req = request(n, base=0.98, F=0.85, **kw)
    return generate_rulesets(req), req.route, [li.latency for li in req.accumulated]


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_unmutated_rulesets_clean(n):
    rs, path, lat = rulesets(n)
    rep = verify_rulesets(rs, path, lat)
    assert rep.ok and rep.findings == [] and not rep.inconclusive
    assert rep.states > 0


def test_short_discard_timer_races():
    rs, path, lat = rulesets(3, latency=5 * US)
    rep = verify_rulesets(with_discard_timer(rs, "N0", int(2.5 * US)), path, lat)
    assert "DiscardRace" in rep.kinds()
    assert any(f.location.startswith("N0") or "N0" in f.location for f in rep.findings)


def test_greedy_swaps_leapfrog():
    rs, path, lat = rulesets(4)
    rep = verify_rulesets(with_greedy_swaps(rs, path), path, lat)
    assert "Leapfrog" in rep.kinds()


def test_unpaired_message_static():
    rs, path, lat = rulesets(3)
    rs = dict(rs)
    del rs["N2"]
    assert any(f.kind == "UnpairedMessage" for f in unpaired_messages(rs))


def test_nontermination_detected():
    # N1 holds its pair forever: no rule ever consumes it
    keep = Rule(0, (Res("N0", 0.5),), (Send("UPDATE", 0),), "hold")
    rs = {"N0": RuleSet("a", "c", "N0", (Stage(0, (Rule(0, (Res("N1", 0.5),), (Free((0,)),)),)),)),
          "N1": RuleSet("b", "c", "N1", (Stage(0, ()),))}
    rep = verify_rulesets(rs, ("N0", "N1"), [US])
    assert "Nontermination" in rep.kinds()


def test_latency_count_checked():
    rs, path, _ = rulesets(3)
    with pytest.raises(ValueError):
        verify_rulesets(rs, path, [US])


def test_bound_reports_inconclusive():
    rs, path, lat = rulesets(5)
    rep = verify_rulesets(rs, path, lat, bound=5)
    assert rep.inconclusive and not rep.findings


def test_report_text():
    rs, path, lat = rulesets(3)
    text = verify_rulesets(rs, path, lat).to_text()
    assert text.splitlines()[0] == "status: pass"
    rep = verify_rulesets(with_greedy_swaps(*rulesets(4)[:2]), rulesets(4)[1], rulesets(4)[2])
    assert "Leapfrog" in rep.to_text() and rep.to_text().startswith("status: fail")


def test_verification_key_ignores_names():
    a, pa, la = rulesets(3)
    b, pb, lb = rulesets(3)
    assert verification_key(a, pa, la) == verification_key(b, pb, lb)
    assert verification_key(a, pa, la) != verification_key(a, pa, [x + 1 for x in la])


def test_dbm_helpers():
    m = _add_clock([[0]])
    m = _up(m, [10])
    assert m is not None and m[1][0] == 10
    assert _canon([[0, -1], [-1, 0]]) is None
    z = _drop_clock(_add_clock(m), 1)
    assert len(z) == len(m)
    tight = tuple(tuple(r) for r in _canon([[0, 0], [5, 0]]))
    loose = tuple(tuple(r) for r in _canon([[0, 0], [9, 0]]))
    assert _subset(tight, loose) and not _subset(loose, tight)
    assert INF > 10 ** 15


def test_added_clocks_keep_the_matrix_square():
    m = [[0]]
    for k in range(4):
        m = _up(_add_clock(m), [10 * (j + 1) for j in range(k + 1)])
        assert all(len(row) == len(m) for row in m)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 50), min_size=1, max_size=4),
       st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4), st.integers(-60, 60)), max_size=4))
def test_incremental_tightening_matches_full_closure(deadlines, extra):
    m = [[0]]
    for k in range(len(deadlines)):
        m = _add_clock(m)
    m = _up(m, deadlines)
    assert m is not None
    n = len(m)
    for i, j, c in extra:
        i, j = i % n, j % n
        if i == j:
            continue
        full = [list(r) for r in m]
        full[i][j] = min(full[i][j], c)
        full = _canon(full)
        inc = _constrain([list(r) for r in m], i, j, c)
        assert (inc is None) == (full is None)
        if inc is None:
            return
        assert inc == full
        m = inc
