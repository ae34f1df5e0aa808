import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from qrsim.kernel import SECOND, Simulator
from qrsim.link import (InterfaceArbiter, LinkRunner, LinkSpec, NodeCapability, QubitBank,
                        attempt_success_probability, seconds_per_pair)


def spec(**kw):
    base = dict(link_id="l", endpoints=("A", "B"), length=10.0)
    base.update(kw)
    return LinkSpec(**base)


def test_success_probability_direct():
    assert attempt_success_probability(spec(length=10)) == pytest.approx(10 ** -0.2)
    assert attempt_success_probability(spec(detector_efficiency=0.5, length=1e-9)) == pytest.approx(0.5)


def test_bsa_ceiling_is_half():
    p = attempt_success_probability(spec(length=1e-9, architecture="bsa", midpoint="M"))
    assert p == pytest.approx(0.5)


@given(st.floats(0.01, 200), st.floats(0.01, 1.0))
def test_probability_in_unit_interval(length, eff):
    for arch in ("direct", "bsa", "epps"):
        p = attempt_success_probability(spec(length=length, detector_efficiency=eff,
                                             architecture=arch, midpoint="M"))
        assert 0 < p <= (0.5 if arch != "direct" else 1.0)


def test_seconds_per_pair():
    s = spec(length=1e-9, attempt_rate=1000)
    assert seconds_per_pair(s) == pytest.approx(1e-3)


@pytest.mark.parametrize("bad", [dict(length=0), dict(attempt_rate=0), dict(detector_efficiency=0),
                                 dict(base_fidelity=0.1), dict(architecture="ghz"),
                                 dict(architecture="bsa"), dict(qubit_capacity=0)])
def test_spec_rejects(bad):
    with pytest.raises(ValueError):
        spec(**bad)


def test_node_capability_rules():
    with pytest.raises(ValueError):
        NodeCapability("MEAS", 4)
    with pytest.raises(ValueError):
        NodeCapability("XYZ")
    assert not NodeCapability("MEAS", 0).stores_qubits


def test_qubit_bank_lowest_first():
    b = QubitBank("A:l", 3)
    assert [b.take(), b.take()] == [0, 1]
    b.give(0)
    assert b.take() == 0
    b.take()
    assert not b.has_free()
    inf = QubitBank("M:l", None)
    assert inf.has_free() and inf.take() == 0 and inf.take() == 1


def _run(s, seconds_, seed=1, cap=None):
    sim = Simulator(seed)
    held = []

    def ready(r):
        return cap is None or len(held) < cap

    r = LinkRunner(sim, s, ready, lambda r: held.append(sim.now))
    r.start()
    sim.run_until(int(seconds_ * SECOND))
    return r, held


def test_success_frequency_matches_probability():
    s = spec(length=20, attempt_rate=1e5)
    r, _ = _run(s, 1.0)
    p = attempt_success_probability(s)
    sigma = math.sqrt(r.attempts * p * (1 - p))
    assert abs(r.successes - r.attempts * p) < 3 * sigma


def test_stalls_when_memory_full():
    r, held = _run(spec(length=1e-6, attempt_rate=1e4), 0.01, cap=2)
    assert len(held) == 2
    assert r.stalled == 0 or r.successes == 2
    r.stop()


def test_arbiter_alternates_links():
    sim = Simulator(3)
    arb = InterfaceArbiter("A", switch_time=10)
    hits = []
    runners = [LinkRunner(sim, spec(link_id=f"l{i}", length=1e-6, attempt_rate=1e4),
                          lambda r: True, lambda r: hits.append(r.spec.link_id), (arb,))
               for i in range(2)]
    for r in runners:
        r.start()
    sim.run_until(SECOND // 1000)
    assert set(hits) == {"l0", "l1"}
    assert all(a != b for a, b in zip(hits, hits[1:]))
