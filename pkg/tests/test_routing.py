import itertools
import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qrsim.link import LinkSpec
from qrsim.routing import (Multiplexer, RoutingGraph, link_cost, pumping_fixed_point,
                           pumping_rounds, pumping_schedule, qdijkstra, raw_seconds_per_pair)
from qrsim.state import purify_outcome


def test_no_pumping_when_raw_suffices():
    assert pumping_rounds(0.95, 0.9) == 0


def test_one_round_matches_purify():
    steps, ok = pumping_schedule(0.9, 0.92)
    assert ok and steps[-1].round == 1
    p, F = purify_outcome(0.9, 0.9)
    assert steps[1].fidelity == pytest.approx(F)
    assert steps[1].raw_pairs == pytest.approx(2 / p)


def test_pumping_saturates():
    fp = pumping_fixed_point(0.9)
    assert 0.94 < fp < 0.945
    assert pumping_rounds(0.9, 0.95) is None


@given(st.floats(0.55, 0.99), st.floats(0.55, 0.999))
def test_schedule_monotone(F_raw, F_idx):
    steps, ok = pumping_schedule(F_raw, F_idx)
    fids = [s.fidelity for s in steps]
    assert fids == sorted(fids)
    costs = [s.raw_pairs for s in steps]
    assert costs == sorted(costs)
    assert ok == (fids[-1] >= F_idx)


def test_link_cost_infinite_when_infeasible():
    l = LinkSpec("l", ("A", "B"), 10.0, base_fidelity=0.9)
    assert not link_cost(l, 0.97).finite
    assert link_cost(l, 0.9).seconds_per_pair == pytest.approx(raw_seconds_per_pair(l))


def _random_graph(seed, n=7, p=0.45):
    rng = random.Random(seed)
    names = [f"n{i}" for i in range(n)]
    links = []
    for a, b in itertools.combinations(names, 2):
        if rng.random() < p:
            links.append(LinkSpec(f"{a}{b}", (a, b), rng.uniform(1, 40),
                                  base_fidelity=rng.uniform(0.85, 0.99)))
    g = RoutingGraph()
    for n_ in names:
        g.add_node(n_)
    for l in links:
        g.add_link(l)
    return g, names, {frozenset(l.endpoints): l for l in links}


def _brute(names, links, src, dst, F):
    best = math.inf
    others = [n for n in names if n not in (src, dst)]
    for k in range(len(others) + 1):
        for mid in itertools.permutations(others, k):
            path = (src,) + mid + (dst,)
            c = 0.0
            for a, b in zip(path, path[1:]):
                l = links.get(frozenset((a, b)))
                if l is None:
                    c = math.inf
                    break
                c += link_cost(l, F).seconds_per_pair
            best = min(best, c)
    return best


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([0.8, 0.9, 0.95]))
def test_qdijkstra_matches_brute_force(seed, F):
    g, names, links = _random_graph(seed)
    r = qdijkstra(g, "n0", "n6", F)
    best = _brute(names, links, "n0", "n6", F)
    if math.isinf(best):
        assert r is None
    else:
        assert r.cost == pytest.approx(best, rel=1e-12)
        assert r.path[0] == "n0" and r.path[-1] == "n6"
        assert sum(c for _, c in r.hops) == pytest.approx(r.cost)


def test_qdijkstra_prefers_parallel_cheaper_edge():
    g = RoutingGraph()
    g.add_link(LinkSpec("slow", ("A", "B"), 50.0))
    g.add_link(LinkSpec("fast", ("A", "B"), 5.0))
    assert qdijkstra(g, "A", "B", 0.9).edge_keys == ("fast",)
    with pytest.raises(ValueError):
        qdijkstra(g, "A", "A", 0.9)
    assert qdijkstra(g, "A", "Z", 0.9) is None


def test_fidelity_index_changes_route():
    # a short low-fidelity hop is cheapest at a loose index but needs pumping at a tight one
    g = RoutingGraph()
    g.add_link(LinkSpec("lo", ("A", "B"), 5.0, base_fidelity=0.9))
    g.add_link(LinkSpec("hi1", ("A", "C"), 12.0, base_fidelity=0.99))
    g.add_link(LinkSpec("hi2", ("C", "B"), 12.0, base_fidelity=0.99))
    assert qdijkstra(g, "A", "B", 0.85).edge_keys == ("lo",)
    assert qdijkstra(g, "A", "B", 0.96).edge_keys == ("hi1", "hi2")


# ---------------------------------------------------------------- multiplexing

class Clock:
    now = 0


def test_circuit_exclusive():
    m = Multiplexer("circuit")
    assert m.admit("c1", ["A", "B"], ["ab"])[0]
    ok, why = m.admit("c2", ["A", "B"], ["ab"])
    assert not ok and "reserved by c1" in why
    assert m.assign("ab", ["c1", "c2"], 0, random.Random(0)) == "c1"
    m.release("c1")
    assert m.admit("c2", ["A", "B"], ["ab"])[0]


def test_bufferspace_partitions_memory():
    m = Multiplexer("bufferspace", {"A": 4, "B": 4})
    assert m.admit("c1", ["A", "B"], ["ab"], qubits=3)[0]
    assert not m.admit("c2", ["A", "B"], ["ab"], qubits=2)[0]
    assert m.admit("c2", ["A", "B"], ["ab"], qubits=1)[0]
    assert m.quota_of("A", "c1") == 3 and m.quota_of("A", "zz") is None


def test_tdm_round_robin():
    m = Multiplexer("tdm", tdm_slice=10)
    got = [m.assign("l", ["a", "b", "c"], t, None) for t in range(0, 60, 10)]
    assert got == ["a", "b", "c", "a", "b", "c"]


@pytest.mark.parametrize("weights", [(1.0, 1.0), (3.0, 1.0)])
def test_statmux_shares_by_weight(weights):
    m = Multiplexer("statmux")
    for c, w in zip(("a", "b"), weights):
        m.admit(c, [], [], weight=w)
    rng = random.Random(5)
    n = 20_000
    wins = sum(m.assign("l", ["a", "b"], 0, rng) == "a" for _ in range(n))
    p = weights[0] / sum(weights)
    assert abs(wins - n * p) < 4 * math.sqrt(n * p * (1 - p))


def test_unassigned_and_starved_counters():
    m = Multiplexer("statmux")
    assert m.assign("l", ["a"], 0, random.Random(0), eligible=lambda c: False) is None
    assert m.state.unassigned["l"] == 1 and m.state.starved["a"] == 1
    with pytest.raises(ValueError):
        Multiplexer("fifo")
