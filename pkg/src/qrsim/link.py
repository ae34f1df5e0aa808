"""Base-entanglement generation between neighbours (direct and midpoint links)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

from .kernel import LINK_ATTEMPT, SECOND, Simulator, ticks
from .state import check_fidelity

NODE_TYPES = ("COMP", "MEAS", "SNSR", "REP1", "REP2", "RTR", "BSA", "EPPS", "OSW")
END_TYPES = ("COMP", "MEAS", "SNSR")
PASSIVE_TYPES = ("BSA", "EPPS", "OSW")
ARCHITECTURES = ("direct", "bsa", "epps")


@dataclass(frozen=True)
class NodeCapability:
    node_type: str = "COMP"
    memory_qubits: int = 16
    T_mem: float = math.inf  # seconds
    single_active_interface: bool = False
    switch_loss_db: float = 0.0  # OSW only
    switch_time: float = 0.0  # seconds between interface switches

    def __post_init__(self):
        if self.node_type not in NODE_TYPES:
            raise ValueError(f"unknown node type {self.node_type!r}")
        if self.node_type == "MEAS" and self.memory_qubits != 0:
            raise ValueError("MEAS nodes have no memory qubits")
        if self.T_mem <= 0:
            raise ValueError("T_mem must be positive")

    @property
    def stores_qubits(self) -> bool:
        return self.node_type != "MEAS"

    @property
    def decay_rate(self) -> float:
        if not self.stores_qubits or math.isinf(self.T_mem):
            return 0.0
        return 1.0 / self.T_mem


@dataclass(frozen=True)
class LinkSpec:
    link_id: str
    endpoints: Tuple[str, str]
    length: float  # km
    attenuation: float = 0.2  # dB/km
    attempt_rate: float = 1.0e4  # attempts per second
    detector_efficiency: float = 1.0
    base_fidelity: float = 0.95
    qubit_capacity: int = 4
    architecture: str = "direct"
    midpoint: Optional[str] = None  # BSA or EPPS node for midpoint links
    switch: Optional[str] = None  # OSW node on the fibre, if any
    switch_loss_db: float = 0.0

    def __post_init__(self):
        if self.length <= 0:
            raise ValueError(f"link {self.link_id}: length must be positive")
        if self.attempt_rate <= 0:
            raise ValueError(f"link {self.link_id}: attempt_rate must be positive")
        if not 0 < self.detector_efficiency <= 1:
            raise ValueError(f"link {self.link_id}: detector_efficiency must be in (0, 1]")
        check_fidelity(self.base_fidelity)
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"link {self.link_id}: unknown architecture {self.architecture!r}")
        if self.architecture != "direct" and not self.midpoint:
            raise ValueError(f"link {self.link_id}: midpoint link needs a midpoint node")
        if self.qubit_capacity < 1:
            raise ValueError(f"link {self.link_id}: qubit_capacity must be >= 1")

    def other(self, node: str) -> str:
        a, b = self.endpoints
        return b if node == a else a

    @property
    def minter(self) -> str:
        if self.architecture != "direct":
            return self.midpoint
        return min(self.endpoints)


def attempt_success_probability(link: LinkSpec) -> float:
    transmission = 10.0 ** (-(link.attenuation * link.length + link.switch_loss_db) / 10.0)
    if link.architecture == "direct":
        return link.detector_efficiency * transmission
    # both photons must be detected and linear optics resolves half the Bell states
    return 0.5 * link.detector_efficiency ** 2 * transmission


def seconds_per_pair(link: LinkSpec) -> float:
    p = attempt_success_probability(link)
    return 1.0 / (link.attempt_rate * p) if p > 0 else math.inf


class QubitBank:
    """Memory qubits at one end of one link."""

    def __init__(self, qnic: str, capacity: Optional[int]):
        self.qnic = qnic
        self.capacity = capacity  # None means unlimited (measure-on-arrival)
        self._free: List[int] = list(range(capacity or 0))
        self._next = 0
        self.in_use = 0

    def has_free(self) -> bool:
        return self.capacity is None or bool(self._free)

    def take(self) -> int:
        self.in_use += 1
        if self.capacity is None:
            self._next += 1
            return self._next - 1
        return self._free.pop(0)

    def give(self, index: int) -> None:
        self.in_use -= 1
        if self.capacity is not None:
            # keep lowest-index-first allocation deterministic
            self._free.append(index)
            self._free.sort()


class InterfaceArbiter:
    """Lets a single-transceiver node attempt on only one link at a time.

    After a success the node switches to the next attached link, paying
    ``switch_time`` before attempts start there.
    """

    def __init__(self, node: str, switch_time: int = 0):
        self.node = node
        self.switch_time = switch_time
        self.links: List["LinkRunner"] = []
        self.active: Optional["LinkRunner"] = None
        self.log: List[Tuple[int, str]] = []  # (time, link id) activation history

    def permits(self, runner: "LinkRunner") -> bool:
        if self.active is None:
            self.active = runner
            self.log.append((runner.sim.now, runner.spec.link_id))
        return self.active is runner

    def after_success(self, runner: "LinkRunner") -> None:
        self._rotate(runner)

    def after_block(self, runner: "LinkRunner") -> None:
        if self.active is runner:
            self._rotate(runner)

    def _rotate(self, runner: "LinkRunner") -> None:
        if len(self.links) < 2:
            return
        i = self.links.index(runner)
        order = self.links[i + 1:] + self.links[:i + 1]
        for cand in order:
            if cand is not runner and cand.resources_ready():
                self._activate(cand)
                return
        self.active = None if not runner.resources_ready() else runner

    def _activate(self, cand: "LinkRunner") -> None:
        prev = self.active
        self.active = cand
        sim = cand.sim
        self.log.append((sim.now + self.switch_time, cand.spec.link_id))
        if prev is not None and prev is not cand:
            prev.suspend()
        cand.wake(delay=self.switch_time)


class LinkRunner:
    """Attempt loop for one link.

    Successes are drawn as geometric gaps between attempts at the link's
    cadence, so the event count scales with successes rather than attempts.
    Attempts pause while either end lacks a free qubit or an arbiter holds
    the interface elsewhere; the skipped cadence slots are counted as stalls.
    """

    def __init__(self, sim: Simulator, spec: LinkSpec, ready: Callable[["LinkRunner"], bool],
                 on_success: Callable[["LinkRunner"], None],
                 arbiters: Tuple[Optional[InterfaceArbiter], ...] = ()):
        self.sim = sim
        self.spec = spec
        self.p = attempt_success_probability(spec)
        self.period = max(1, ticks(1.0 / spec.attempt_rate))
        self._ready = ready
        self._on_success = on_success
        self.arbiters = [a for a in arbiters if a is not None]
        for a in self.arbiters:
            a.links.append(self)
        self._event = None
        self._started_at: Optional[int] = None
        self._paused_at: Optional[int] = None
        self.attempts = 0
        self.successes = 0
        self.stalled = 0
        self.active_time = 0
        self.enabled = False
        self._log_p = math.log1p(-self.p) if self.p < 1 else None

    # -- control

    def start(self) -> None:
        self.enabled = True
        self._paused_at = self.sim.now
        self.wake()

    def stop(self) -> None:
        self.enabled = False
        self.suspend()

    def resources_ready(self) -> bool:
        return self.enabled and self._ready(self)

    def wake(self, delay: int = 0) -> None:
        """Resume attempting if idle and everything permits it."""
        if self._event is not None or not self.enabled:
            return
        if not self._ready(self):
            return
        if not all(a.permits(self) for a in self.arbiters):
            return
        now = self.sim.now + delay
        if self._paused_at is not None:
            self.stalled += (now - self._paused_at) // self.period
            self._paused_at = None
        self._started_at = now
        k = self._draw_attempts()
        self._event = self.sim.schedule(now + k * self.period, LINK_ATTEMPT, self.spec.link_id,
                                        self._fire, k)

    def suspend(self) -> None:
        """Abandon the in-flight attempt run (interface switched away)."""
        if self._event is None:
            return
        ev = self._event
        self._event = None
        ev.cancelled = True
        done = max(0, (self.sim.now - self._started_at) // self.period)
        self.attempts += min(done, ev.payload)
        self.active_time += self.sim.now - self._started_at
        self._paused_at = self.sim.now

    def _draw_attempts(self) -> int:
        if self._log_p is None:
            return 1
        u = 1.0 - self.sim.rng.random()  # (0, 1]
        return 1 + int(math.log(u) / self._log_p)

    def _fire(self, ev) -> None:
        self._event = None
        self.attempts += ev.payload
        self.successes += 1
        self.active_time += self.sim.now - self._started_at
        self._paused_at = self.sim.now
        self._on_success(self)
        for a in self.arbiters:
            a.after_success(self)
        if self.arbiters and not all(a.active is self for a in self.arbiters):
            return
        self.wake()
        if self._event is None:
            for a in self.arbiters:
                a.after_block(self)

    def stats(self) -> Dict[str, float]:
        elapsed = self.sim.now / SECOND
        return {
            "attempts": self.attempts,
            "successes": self.successes,
            "stalled_attempts": self.stalled,
            "success_probability": self.p,
            "seconds_per_pair": (elapsed / self.successes) if self.successes else None,
        }
