"""Deterministic discrete-event kernel and the classical message fabric."""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass
from typing import Any, Callable, Dict, IO, List, Optional, Tuple

PS = 1
NS = 1_000
US = 1_000_000
MS = 1_000_000_000
SECOND = 1_000_000_000_000

FIBER_VELOCITY = 2.0e8  # m/s
DEFAULT_LOOPBACK = 1 * US


def seconds(ticks: int) -> float:
    return ticks / SECOND


def ticks(seconds_: float) -> int:
    return int(round(seconds_ * SECOND))


class SimulationError(RuntimeError):
    pass


class SchedulingError(SimulationError):
    pass


class ConfigurationError(ValueError):
    pass


LINK_ATTEMPT = "LinkAttempt"
MESSAGE = "MessageDelivery"
TIMER = "TimerExpiry"
SCENARIO = "ScenarioAction"


class Event:
    __slots__ = ("fire_time", "target", "kind", "payload", "seq", "handler", "cancelled", "src")

    def __init__(self, fire_time, target, kind, payload, seq, handler, src=None):
        self.fire_time = fire_time
        self.target = target
        self.kind = kind
        self.payload = payload
        self.seq = seq
        self.handler = handler
        self.cancelled = False
        self.src = src

    def __repr__(self) -> str:
        return f"Event(t={self.fire_time}, kind={self.kind}, target={self.target}, seq={self.seq})"


@dataclass
class RunStats:
    events: int
    now: int
    pending: int


class Simulator:
    """Single-threaded event loop owning the clock and the one RNG.

    Events with equal fire time run in insertion order.
    """

    def __init__(self, seed: int = 0, trace: Optional[IO[str]] = None):
        self.now = 0
        self.seed = seed
        self.rng = random.Random(seed)
        self._queue: List[Tuple[int, int, Event]] = []
        self._seq = 0
        self.events_executed = 0
        self.trace = trace
        self.trace_detail: Optional[Callable[[Event], str]] = None

    def schedule(self, fire_time: int, kind: str, target: Any, handler: Callable[[Event], None],
                 payload: Any = None, src: Any = None) -> Event:
        if fire_time < self.now:
            raise SchedulingError(f"event {kind} for {target} at {fire_time} < now {self.now}")
        ev = Event(fire_time, target, kind, payload, self._seq, handler, src)
        self._seq += 1
        heapq.heappush(self._queue, (fire_time, ev.seq, ev))
        return ev

    def schedule_in(self, delay: int, kind: str, target: Any, handler, payload=None, src=None) -> Event:
        return self.schedule(self.now + delay, kind, target, handler, payload, src)

    @staticmethod
    def cancel(event: Optional[Event]) -> None:
        if event is not None:
            event.cancelled = True

    def peek(self) -> Optional[int]:
        while self._queue and self._queue[0][2].cancelled:
            heapq.heappop(self._queue)
        return self._queue[0][0] if self._queue else None

    def run_until(self, t: Optional[int] = None) -> RunStats:
        """Execute every event with fire time <= ``t`` (or until quiescence)."""
        q = self._queue
        pop = heapq.heappop
        trace = self.trace
        while q:
            fire_time, _, ev = q[0]
            if t is not None and fire_time > t:
                break
            pop(q)
            if ev.cancelled:
                continue
            self.now = fire_time
            self.events_executed += 1
            if trace is not None:
                self._write_trace(ev)
            try:
                ev.handler(ev)
            except SimulationError:
                raise
            except Exception as exc:
                raise SimulationError(
                    f"handler failed at event #{self.events_executed} t={fire_time} "
                    f"kind={ev.kind} target={ev.target}: {exc!r}") from exc
        if t is not None and t > self.now:
            self.now = t
        return RunStats(self.events_executed, self.now, len(q))

    def _write_trace(self, ev: Event) -> None:
        detail = self.trace_detail(ev) if self.trace_detail else ""
        src = ev.src if ev.src is not None else ev.target
        self.trace.write(f"{ev.fire_time} {ev.kind} {src} {ev.target} {detail}\n")


@dataclass(frozen=True)
class ClassicalChannel:
    endpoints: Tuple[str, str]
    distance: float  # meters
    propagation_velocity: float = FIBER_VELOCITY

    @property
    def latency(self) -> int:
        lat = ticks(self.distance / self.propagation_velocity)
        return max(lat, 1)


class ClassicalFabric:
    """Fully connected classical network routed over configured channels.

    Multi-hop latency is the minimum summed channel latency.
    """

    def __init__(self, sim: Simulator, deliver: Callable[[str, str, Any], None],
                 loopback: int = DEFAULT_LOOPBACK):
        self.sim = sim
        self.deliver = deliver
        self.loopback = loopback
        self._adj: Dict[str, Dict[str, int]] = {}
        self._cache: Dict[str, Dict[str, int]] = {}
        self.processing_delay: Dict[str, int] = {}
        self.messages_sent = 0

    def add_node(self, node: str) -> None:
        self._adj.setdefault(node, {})

    def add_channel(self, ch: ClassicalChannel) -> None:
        a, b = ch.endpoints
        lat = ch.latency
        for u, v in ((a, b), (b, a)):
            row = self._adj.setdefault(u, {})
            if v not in row or lat < row[v]:
                row[v] = lat
        self._cache.clear()

    def _distances(self, src: str) -> Dict[str, int]:
        d = self._cache.get(src)
        if d is None:
            d = {src: 0}
            heap = [(0, src)]
            while heap:
                du, u = heapq.heappop(heap)
                if du > d.get(u, du):
                    continue
                for v, w in self._adj.get(u, {}).items():
                    nd = du + w
                    if nd < d.get(v, nd + 1):
                        d[v] = nd
                        heapq.heappush(heap, (nd, v))
            self._cache[src] = d
        return d

    def latency(self, src: str, dst: str) -> int:
        if src not in self._adj or dst not in self._adj:
            raise ConfigurationError(f"unknown classical endpoint {src if src not in self._adj else dst}")
        if src == dst:
            return self.loopback
        d = self._distances(src).get(dst)
        if d is None:
            raise ConfigurationError(f"no classical route {src} -> {dst}")
        return d

    def send(self, src: str, dst: str, msg: Any) -> None:
        delay = self.latency(src, dst) + self.processing_delay.get(src, 0)
        self.messages_sent += 1
        self.sim.schedule(self.sim.now + delay, MESSAGE, dst, self._on_delivery, msg, src)

    def _on_delivery(self, ev: Event) -> None:
        self.deliver(ev.src, ev.target, ev.payload)
