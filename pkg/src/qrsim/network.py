"""The simulated network: links, node engines, classical fabric, multiplexer
and connection manager wired to one event loop.

This module also holds the simulator's ground truth.  Every Bell pair lives
here as a :class:`~qrsim.state.BellPair`; node engines only sample outcomes
from it through the host interface below.
"""

from __future__ import annotations

import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Dict, IO, Iterable, List, Optional, Sequence, Tuple

from .connection.generator import GeneratorPolicy
from .connection.verifier import DEFAULT_BOUND
from .connection.request import Requirements
from .connection.setup import ConnectionManager, ConnectionRecord
from .engine import DELIVERED, FREED, PURIFIED, SWAPPED, NodeEngine
from .internetwork import Topology
from .kernel import (DEFAULT_LOOPBACK, MESSAGE, MS, SCENARIO, ClassicalChannel, ClassicalFabric, Event,
                     Simulator, ticks)
from .link import PASSIVE_TYPES, InterfaceArbiter, LinkRunner, QubitBank, seconds_per_pair
from .routing import Multiplexer
from .ruleset.model import ProtocolMessage
from .state import (BellPair, EntangledResource, NameMinter, PhysicalQubitAddr, purify_outcome,
                    qber_z, swap_fidelity)

log = logging.getLogger(__name__)

CATEGORIES = (PURIFIED, SWAPPED, DELIVERED, FREED)


@dataclass
class PurifyTruth:
    first: str  # node that drew the outcome; the other end uses bits[1]
    bits: Tuple[int, int]
    round: int


@dataclass
class LinkNotify:
    """Midpoint heralding: the pair is usable at ``node`` once this arrives."""
    resource: EntangledResource


@dataclass
class ConnStats:
    raw_assigned: int = 0
    delivered: int = 0
    fidelity_sum: float = 0.0
    fidelity_sq: float = 0.0
    est_fidelity_sum: float = 0.0
    purify_attempts: int = 0
    purify_successes: int = 0
    handoffs: int = 0
    # (basis A, basis B, mismatch) per delivered pair measured at both ends
    meas_pairs: List[Tuple[str, str, int]] = field(default_factory=list)
    first_delivery: Optional[int] = None
    last_delivery: Optional[int] = None
    fidelities: List[float] = field(default_factory=list)

    @property
    def mean_fidelity(self) -> Optional[float]:
        return self.fidelity_sum / self.delivered if self.delivered else None

    def qber(self, basis: str = "Z") -> Optional[Tuple[float, int]]:
        same = [m for a, b, m in self.meas_pairs if a == b == basis]
        if not same:
            return None
        return sum(same) / len(same), len(same)


class Network:
    def __init__(self, topology: Topology, *, seed: int = 0, discipline: str = "statmux",
                 channels: Sequence[ClassicalChannel] = (), loopback: int = DEFAULT_LOOPBACK,
                 processing_delay: Optional[Dict[str, int]] = None, trace: Optional[IO[str]] = None,
                 staleness_factor: float = 10.0, app_hold: int = 0, tdm_slice: Optional[int] = None,
                 verify: bool = True, verify_bound: int = DEFAULT_BOUND,
                 policy: GeneratorPolicy = GeneratorPolicy(), keep_fidelities: bool = False):
        self.topology = topology
        self.sim = Simulator(seed, trace)
        self.sim.trace_detail = self._trace_detail
        self.minter = NameMinter()
        self.staleness_factor = staleness_factor
        self.app_hold = app_hold
        self.keep_fidelities = keep_fidelities

        self.fabric = ClassicalFabric(self.sim, self._deliver, loopback)
        for n in topology.nodes:
            self.fabric.add_node(n)
        for l in topology.links.values():
            a, b = l.endpoints
            km = l.length * 1000.0
            if l.architecture != "direct":
                self.fabric.add_channel(ClassicalChannel((a, l.midpoint), km / 2))
                self.fabric.add_channel(ClassicalChannel((l.midpoint, b), km / 2))
            else:
                self.fabric.add_channel(ClassicalChannel((a, b), km))
        for ch in channels:
            self.fabric.add_channel(ch)
        if processing_delay:
            self.fabric.processing_delay.update(processing_delay)

        self.engines: Dict[str, NodeEngine] = {}
        for n, cap in topology.nodes.items():
            if cap.node_type not in PASSIVE_TYPES:
                self.engines[n] = NodeEngine(n, self, cap.node_type, policy.meas_basis)

        self.banks: Dict[Tuple[str, str], QubitBank] = {}
        self._bank_by_qnic: Dict[str, QubitBank] = {}
        self.runners: Dict[str, LinkRunner] = {}
        self._runners_at: Dict[str, List[LinkRunner]] = defaultdict(list)
        arbiters = {n: InterfaceArbiter(n, ticks(cap.switch_time))
                    for n, cap in topology.nodes.items() if cap.single_active_interface}
        self.arbiters = arbiters
        for l in sorted(topology.links.values(), key=lambda l: l.link_id):
            for e in l.endpoints:
                cap = topology.nodes[e]
                bank = QubitBank(f"{e}:{l.link_id}", None if not cap.stores_qubits else l.qubit_capacity)
                self.banks[(e, l.link_id)] = bank
                self._bank_by_qnic[bank.qnic] = bank
            r = LinkRunner(self.sim, l, self._link_ready, self._on_link_success,
                           tuple(arbiters.get(e) for e in l.endpoints))
            self.runners[l.link_id] = r
            for e in l.endpoints:
                self._runners_at[e].append(r)

        capacity = {n: cap.memory_qubits for n, cap in topology.nodes.items()}
        self.mux = Multiplexer(discipline, capacity, tdm_slice or MS)
        self.manager = ConnectionManager(self, policy, verify, verify_bound)

        self.pairs: Dict[object, BellPair] = {}
        self.counts: Counter = Counter()
        self.conn_stats: Dict[str, ConnStats] = {}
        self.active: Dict[str, List[str]] = defaultdict(list)  # link id -> connections
        self.installed: Dict[str, set] = defaultdict(set)
        self.glue: Dict[Tuple[str, str], str] = {}
        self.usage: Counter = Counter()  # (node, connection) -> qubits held
        self._usage_of: Dict[PhysicalQubitAddr, Tuple[str, str]] = {}
        self._purify_cache: Dict[frozenset, PurifyTruth] = {}
        self.stale_freed = 0

    # ------------------------------------------------------------- scenario

    def connect(self, connection_id: str, initiator: str, responder: str, min_fidelity: float,
                at: float = 0.0, mode: str = "stream", count: int = 0, qubits: int = 2,
                weight: float = 1.0) -> None:
        req = Requirements(min_fidelity, mode, count)

        def go(_ev):
            self.manager.initiate(connection_id, initiator, responder, req, qubits, weight)
        self.sim.schedule(ticks(at), SCENARIO, initiator, go)

    def teardown_at(self, connection_id: str, at: float, node: Optional[str] = None) -> None:
        self.sim.schedule(ticks(at), SCENARIO, node or "-",
                          lambda _ev: self.manager.teardown(connection_id, node))

    def run(self, duration: Optional[float] = None):
        return self.sim.run_until(None if duration is None else ticks(duration))

    # -------------------------------------------------------- classical plane

    def send(self, src: str, dst: str, msg) -> None:
        self.fabric.send(src, dst, msg)

    def _deliver(self, src: str, dst: str, msg) -> None:
        if isinstance(msg, ProtocolMessage):
            eng = self.engines.get(dst)
            if eng is not None:
                eng.on_message(src, msg)
        elif isinstance(msg, LinkNotify):
            self._arrive(dst, msg.resource)
        else:
            self.manager.on_message(src, dst, msg)

    def _trace_detail(self, ev: Event) -> str:
        p = ev.payload
        if ev.kind == MESSAGE:
            if isinstance(p, ProtocolMessage):
                return f"{p.kind} conn={p.connection_id} names={','.join(map(str, p.names))}"
            if isinstance(p, LinkNotify):
                return f"LinkNotify {p.resource.name}"
            return type(p).__name__
        if ev.kind == "TimerExpiry" and isinstance(p, tuple):
            res = p[2]
            return f"{p[1]} conn={p[0]}" + (f" res={res.name}" if res is not None else "")
        if ev.kind == "LinkAttempt":
            return f"attempts={p}"
        return ""

    # ------------------------------------------------------------ link layer

    def _eligible(self, link_id: str):
        if self.mux.discipline != "bufferspace":
            return None
        a, b = self.topology.links[link_id].endpoints

        def ok(conn):
            return all(self.mux.quota_of(n, conn) is None or self.usage[(n, conn)] < self.mux.quota_of(n, conn)
                       for n in (a, b))
        return ok

    def _link_ready(self, runner: LinkRunner) -> bool:
        lid = runner.spec.link_id
        if not self.active.get(lid):
            return False
        if not all(self.banks[(e, lid)].has_free() for e in runner.spec.endpoints):
            return False
        elig = self._eligible(lid)
        if elig is not None and not any(elig(c) for c in self.active[lid]):
            return False
        return True

    def _on_link_success(self, runner: LinkRunner) -> None:
        spec = runner.spec
        lid = spec.link_id
        now = self.sim.now
        name = self.minter.mint(spec.minter, now)
        rate = sum(self.topology.nodes[e].decay_rate for e in spec.endpoints)
        pair = BellPair(name, spec.base_fidelity, now, rate)
        self.pairs[name] = pair
        self.counts["raw"] += 1
        conn = self.mux.assign(lid, self.active.get(lid, []), now, self.sim.rng, self._eligible(lid))
        pair.connection = conn
        if conn is not None:
            self._stats(conn).raw_assigned += 1
        else:
            self.counts["unassigned"] += 1
        halves = []
        for e in spec.endpoints:
            idx = self.banks[(e, lid)].take()
            addr = PhysicalQubitAddr(f"{e}:{lid}", idx)
            res = EntangledResource(name, addr, spec.other(e), spec.base_fidelity, name.timestamp,
                                    pair, est_updated=now)
            res.connection = conn
            if conn is not None:
                self.usage[(e, conn)] += 1
                self._usage_of[addr] = (e, conn)
            halves.append((e, res))
        for e, res in halves:
            if spec.architecture != "direct":
                self.send(spec.midpoint, e, LinkNotify(res))
            else:
                self._arrive(e, res)

    def _arrive(self, node: str, res: EntangledResource) -> None:
        eng = self.engines.get(node)
        if eng is None:
            return
        eng.on_resource_arrival(res)
        if res.name in eng.unassigned:
            # nobody claims it here; release after a few link periods
            spec = self.topology.links[res.local_qubit.qnic_address.split(":", 1)[1]] \
                if res.local_qubit else None
            spp = seconds_per_pair(spec) if spec else 0.0
            window = max(1, ticks(self.staleness_factor * spp))
            self.sim.schedule_in(window, SCENARIO, node, self._stale, (node, res.name))

    def _stale(self, ev: Event) -> None:
        node, name = ev.payload
        if self.engines[node].free_unassigned(name):
            self.stale_freed += 1

    def free_qubits(self, node: str, link_id: str) -> int:
        bank = self.banks[(node, link_id)]
        if bank.capacity is None:
            return 1 << 30
        return bank.capacity - bank.in_use

    # --------------------------------------------------------- host interface

    def half_terminated(self, node: str, res: EntangledResource, category: str) -> None:
        if res.local_qubit is not None:
            if category == DELIVERED and self.app_hold > 0:
                self.sim.schedule_in(self.app_hold, SCENARIO, node,
                                     lambda _ev, q=res.local_qubit: self._release(q))
            else:
                self._release(res.local_qubit)
        pair = res.pair
        pair.open_halves -= 1
        if pair.terminal is None:
            pair.terminal = category
            self.counts[category] += 1
        if pair.open_halves <= 0:
            self.pairs.pop(pair.name, None)

    def _release(self, q: PhysicalQubitAddr) -> None:
        bank = self._bank_by_qnic[q.qnic_address]
        bank.give(q.qubit_index)
        held = self._usage_of.pop(q, None)
        if held is not None:
            self.usage[held] -= 1
        node = q.qnic_address.split(":", 1)[0]
        for r in self._runners_at[node]:
            r.wake()

    def half_renamed(self, node: str, old_pair: BellPair) -> None:
        old_pair.open_halves -= 1
        if old_pair.open_halves <= 0:
            self.pairs.pop(old_pair.name, None)

    def purification_truth(self, key, kept_pair: BellPair, sac_pair: BellPair, now: int,
                           node: Optional[str] = None) -> PurifyTruth:
        t = self._purify_cache.pop(key, None)
        if t is not None:
            return t
        F1, F2 = kept_pair.fidelity_at(now), sac_pair.fidelity_at(now)
        p, Fs = purify_outcome(F1, F2)
        rng = self.sim.rng
        success = rng.random() < p
        b = rng.randrange(2)
        t = PurifyTruth(node, (b, b if success else 1 - b), kept_pair.rounds)
        st = self._stats(kept_pair.connection) if kept_pair.connection else None
        if st is not None:
            st.purify_attempts += 1
        if success:
            kept_pair.fidelity = Fs
            kept_pair.updated = now
            kept_pair.rounds += 1
            if st is not None:
                st.purify_successes += 1
        self._purify_cache[key] = t
        return t

    def swap_truth(self, node: str, r0: EntangledResource, r1: EntangledResource,
                   now: int) -> BellPair:
        F = swap_fidelity(r0.pair.fidelity_at(now), r1.pair.fidelity_at(now))
        name = self.minter.mint(node, now)
        nodes = self.topology.nodes
        rate = nodes[r0.partner_node].decay_rate + nodes[r1.partner_node].decay_rate
        pair = BellPair(name, F, now, rate, raw=False, connection=r0.connection)
        # ends that measured on arrival keep their outcome record across the swap
        for r in (r0, r1):
            m = r.pair.meas.get(r.partner_node)
            if m is not None:
                pair.meas[r.partner_node] = m
        self.pairs[name] = pair
        self.counts["swap_products"] += 1
        return pair

    def glue_parent(self, node: str, connection_id: str) -> Optional[str]:
        return self.glue.get((node, connection_id))

    def advertised_fidelity(self, parent: str, node: str, partner: str) -> Optional[float]:
        return self.manager.advertised(parent, node, partner)

    def handed_off(self, node: str, child: str, parent: str, res: EntangledResource) -> None:
        pair = res.pair
        pair.delivered_ends.add(node)
        if len(pair.delivered_ends) == 2:
            pair.delivered_ends.clear()
            self._stats(child).handoffs += 1

    def delivered(self, node: str, inst, res: EntangledResource) -> None:
        pair = res.pair
        pair.delivered_ends.add(node)
        if len(pair.delivered_ends) < 2:
            return
        now = self.sim.now
        conn = inst.rs.connection_id
        st = self._stats(conn)
        F = pair.fidelity_at(now)
        st.delivered += 1
        st.fidelity_sum += F
        st.fidelity_sq += F * F
        st.est_fidelity_sum += res.est_fidelity
        if self.keep_fidelities:
            st.fidelities.append(F)
        if st.first_delivery is None:
            st.first_delivery = now
        st.last_delivery = now
        if len(pair.meas) == 2:
            (na, a), (nb, b) = sorted(pair.meas.items())
            F_meas = pair.fidelity_at(max(a["time"], b["time"], pair.updated))
            if a["basis"] == b["basis"]:
                mismatch = int(self.sim.rng.random() < qber_z(F_meas))
            else:
                mismatch = self.sim.rng.randrange(2)
            st.meas_pairs.append((a["basis"], b["basis"], mismatch))
        rec = self.manager.records.get(conn)
        if rec is not None and rec.requirements.mode == "count" \
                and st.delivered >= rec.requirements.count and not rec.torn_down_at:
            self.manager.teardown(conn, node)

    # ---------------------------------------------------- connection hooks

    def register_connection(self, rec: ConnectionRecord) -> None:
        self._stats(rec.connection_id)

    def _stats(self, conn: str) -> ConnStats:
        st = self.conn_stats.get(conn)
        if st is None:
            st = self.conn_stats[conn] = ConnStats()
        return st

    def _path_links(self, rec: ConnectionRecord) -> List[Tuple[str, str, str]]:
        out = []
        for i, (kind, ref) in enumerate(rec.hops):
            if kind == "link":
                out.append((ref, rec.route[i], rec.route[i + 1]))
        return out

    def on_installed(self, rec: ConnectionRecord, node: str) -> None:
        inst = self.installed[rec.connection_id]
        inst.add(node)
        for lid, a, b in self._path_links(rec):
            if node in (a, b) and a in inst and b in inst:
                act = self.active[lid]
                if rec.connection_id not in act:
                    act.append(rec.connection_id)
                r = self.runners[lid]
                if not r.enabled:
                    r.start()
                else:
                    r.wake()

    def on_uninstalled(self, rec: ConnectionRecord, node: str) -> None:
        self.installed[rec.connection_id].discard(node)
        for lid, a, b in self._path_links(rec):
            if node in (a, b):
                act = self.active.get(lid, [])
                if rec.connection_id in act:
                    act.remove(rec.connection_id)
                if not act and self.runners[lid].enabled:
                    self.runners[lid].stop()

    # ---------------------------------------------------------------- checks

    def accounting(self) -> Dict[str, int]:
        """Pair-level conservation: every pair created is terminal or live."""
        c = self.counts
        live = sum(1 for p in self.pairs.values() if p.terminal is None)
        lhs = c["raw"] + c["swap_products"]
        rhs = c[PURIFIED] + c[SWAPPED] + c[DELIVERED] + c[FREED] + live
        return {"raw": c["raw"], "swap_products": c["swap_products"], "purified": c[PURIFIED],
                "swapped": c[SWAPPED], "delivered": c[DELIVERED], "freed": c[FREED],
                "live": live, "balanced": int(lhs == rhs)}

    def name_sweep(self) -> List[str]:
        """Live names whose two holders disagree about who holds the other half."""
        holders: Dict[object, List[Tuple[str, EntangledResource]]] = defaultdict(list)
        for n, eng in self.engines.items():
            for name, res in eng.name_index.items():
                holders[name].append((n, res))
        bad = []
        for name, hs in holders.items():
            if len(hs) > 2:
                bad.append(f"{name} held at {len(hs)} nodes")
            elif len(hs) == 2:
                (n1, r1), (n2, r2) = hs
                if r1.partner_node != n2 or r2.partner_node != n1:
                    bad.append(f"{name}: {n1} thinks {r1.partner_node}, {n2} thinks {r2.partner_node}")
        return bad

    def faults(self) -> Dict[str, int]:
        out: Counter = Counter()
        for eng in self.engines.values():
            out.update(eng.faults)
        return dict(out)

    def leaks(self, connection_id: str) -> List[str]:
        out = []
        for n, eng in self.engines.items():
            if connection_id in eng.rulesets:
                out.append(f"{n}: RuleSet still installed")
            for res in eng.name_index.values():
                if res.connection == connection_id:
                    out.append(f"{n}: {res.name} still held")
        return out

    def throughput(self, connection_id: str, duration: float) -> float:
        st = self.conn_stats.get(connection_id)
        return (st.delivered / duration) if st and duration > 0 else 0.0
