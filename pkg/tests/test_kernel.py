import io
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from qrsim.kernel import (SECOND, ClassicalChannel, ClassicalFabric, ConfigurationError,
                          SchedulingError, SimulationError, Simulator, seconds, ticks)


def test_ticks_round_trip():
    assert ticks(1.0) == SECOND
    assert seconds(ticks(0.25)) == 0.25


@given(st.lists(st.integers(0, 50), min_size=1, max_size=60))
def test_equal_times_run_in_insertion_order(times):
    sim = Simulator()
    seen = []
    for i, t in enumerate(times):
        sim.schedule(t, "TimerExpiry", "n", lambda ev: seen.append((ev.fire_time, ev.payload)), i)
    sim.run_until()
    assert seen == sorted(seen)
    assert [p for _, p in seen] == [i for _, i in sorted((t, i) for i, t in enumerate(times))]


def test_clock_monotone_and_past_rejected():
    sim = Simulator()
    clock = []
    for t in (5, 1, 3, 3, 9):
        sim.schedule(t, "TimerExpiry", "n", lambda ev: clock.append(sim.now))
    sim.run_until()
    assert clock == sorted(clock)
    with pytest.raises(SchedulingError):
        sim.schedule(1, "TimerExpiry", "n", lambda ev: None)


def test_run_until_stops_and_advances_clock():
    sim = Simulator()
    fired = []
    sim.schedule(10, "TimerExpiry", "n", lambda ev: fired.append(10))
    sim.schedule(30, "TimerExpiry", "n", lambda ev: fired.append(30))
    stats = sim.run_until(20)
    assert fired == [10] and sim.now == 20 and stats.pending == 1


def test_cancel():
    sim = Simulator()
    fired = []
    ev = sim.schedule(1, "TimerExpiry", "n", lambda ev: fired.append(1))
    Simulator.cancel(ev)
    sim.run_until()
    assert fired == [] and sim.events_executed == 0


def test_handler_error_wrapped():
    sim = Simulator()
    sim.schedule(1, "TimerExpiry", "n", lambda ev: 1 / 0)
    with pytest.raises(SimulationError, match="ZeroDivisionError"):
        sim.run_until()


def test_same_seed_same_draws():
    a, b = Simulator(42), Simulator(42)
    assert [a.rng.random() for _ in range(5)] == [b.rng.random() for _ in range(5)]


def _fabric():
    sim = Simulator()
    got = []
    fab = ClassicalFabric(sim, lambda s, d, m: got.append((sim.now, s, d, m)))
    for n in "ABCD":
        fab.add_node(n)
    return sim, fab, got


def test_channel_latency_speed_of_light():
    assert ClassicalChannel(("A", "B"), 2000.0).latency == ticks(1e-5)
    assert ClassicalChannel(("A", "B"), 1e-9).latency == 1


def test_fabric_multi_hop_minimum_and_loopback():
    sim, fab, got = _fabric()
    fab.add_channel(ClassicalChannel(("A", "B"), 1000))
    fab.add_channel(ClassicalChannel(("B", "C"), 1000))
    fab.add_channel(ClassicalChannel(("A", "C"), 5000))
    assert fab.latency("A", "C") == 2 * ticks(5e-6)
    assert fab.latency("A", "A") == fab.loopback
    with pytest.raises(ConfigurationError):
        fab.latency("A", "D")
    with pytest.raises(ConfigurationError):
        fab.latency("A", "Z")


def test_fabric_fifo_and_processing_delay():
    sim, fab, got = _fabric()
    fab.add_channel(ClassicalChannel(("A", "B"), 1000))
    fab.processing_delay["A"] = 7
    for i in range(5):
        fab.send("A", "B", i)
    sim.run_until()
    assert [m for *_, m in got] == list(range(5))
    assert got[0][0] == ticks(5e-6) + 7


def test_trace_lines():
    buf = io.StringIO()
    sim = Simulator(trace=buf)
    sim.schedule(3, "TimerExpiry", "X", lambda ev: None)
    sim.run_until()
    assert buf.getvalue() == "3 TimerExpiry X X \n"


def test_deterministic_random_schedule():
    def run(seed):
        sim = Simulator(seed)
        order = []
        r = random.Random(seed)

        def h(ev):
            order.append((sim.now, ev.payload))
            if ev.payload < 200:
                sim.schedule_in(sim.rng.randrange(5), "TimerExpiry", "n", h, ev.payload + 1)
        for i in range(3):
            sim.schedule(r.randrange(3), "TimerExpiry", "n", h, i * 100)
        sim.run_until()
        return order
    assert run(9) == run(9)
