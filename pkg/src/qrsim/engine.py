"""Per-node RuleSet executor.

Each node owns a :class:`NodeEngine`.  Resources arrive from the link layer
(or are renamed by TRANSFER messages), are owned by one RuleSet stage at a
time, and leave through exactly one terminal action: purification loss,
swap, delivery or free.  Ground truth lives on the shared
:class:`~qrsim.state.BellPair` objects held by the host network; the engine
only ever consults it to sample outcomes.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .kernel import TIMER
from .ruleset.model import (DELIVER_STAGE, PAULIS, WILDCARD, Cmp, Free, FreeMsg, Meas,
                            MeasResultMsg, Promote, ProtocolMessage, QCirc, Res, Rule, RuleSet,
                            Send, SetTimer, SetVar, Timer, TransferMsg, UpdateMsg)
from .state import (BellPair, EntangledResource, ExternalName, compose_pauli, purify_outcome,
                    swap_fidelity)

log = logging.getLogger(__name__)

# terminal categories for one half of a pair
PURIFIED = "purified"
SWAPPED = "swapped"
DELIVERED = "delivered"
FREED = "freed"

FAULT_KINDS = (
    "discard_race",        # TRANSFER or MEAS_RESULT for a name this node already freed
    "unknown_round",       # MEAS_RESULT that matches no local purification
    "double_consumption",  # terminal action on a resource that is already terminal
    "unknown_resource",    # message names a resource never seen here
    "partner_mismatch",    # TRANSFER from a node that is not the resource's partner
    "fidelity_shortfall",  # border splice below the advertised virtual-link fidelity
)


@dataclass
class TimerToken:
    timer_id: str
    resource: Optional[EntangledResource]
    fired_at: int


@dataclass
class PendingPurification:
    kept: EntangledResource
    sacrificed_name: ExternalName
    local_bit: int
    round: int


@dataclass
class PendingSwapRecord:
    new_name: ExternalName
    old_names: Tuple[ExternalName, ExternalName]
    partners: Tuple[str, str]
    corrections: Dict[str, str]
    est_fidelity: float
    notified: set = field(default_factory=set)


class InstalledRuleSet:
    """Runtime state of one RuleSet at its node."""

    def __init__(self, rs: RuleSet, now: int):
        self.rs = rs
        self.installed_at = now
        self.stage_resources: Dict[int, List[EntangledResource]] = {s.stage_id: [] for s in rs.stages}
        self.variables = {s.stage_id: s.initial_variables() for s in rs.stages}
        self.tokens: Dict[int, List[TimerToken]] = {s.stage_id: [] for s in rs.stages}
        self.firings: Dict[Tuple[int, int], int] = defaultdict(int)
        self.delivered = 0


class NodeEngine:
    def __init__(self, node: str, host, node_type: str = "COMP", meas_basis: str = "Z"):
        self.node = node
        self.host = host
        self.node_type = node_type
        self.meas_basis = meas_basis
        self.unassigned: Dict[ExternalName, EntangledResource] = {}
        self.name_index: Dict[ExternalName, EntangledResource] = {}
        self.rulesets: Dict[str, InstalledRuleSet] = {}  # connection id -> runtime
        self.tombstones: Dict[ExternalName, str] = {}
        self.deferred: Dict[ExternalName, List[ProtocolMessage]] = defaultdict(list)
        self.purifications: Dict[frozenset, PendingPurification] = {}
        self.early_results: Dict[frozenset, MeasResultMsg] = {}
        self.faults: Dict[str, int] = defaultdict(int)
        self.fault_log: List[Tuple[int, str, str]] = []
        self.firings = 0
        self.swaps = 0
        self.app_records: List[Tuple[int, str, int, str, str]] = []
        self._evaluating = False
        self._dirty: Dict[str, None] = {}  # ordered, so re-evaluation order is deterministic
        self.removed: set = set()  # connections uninstalled here
        self.awaiting: Dict[str, List[Tuple[str, ProtocolMessage]]] = defaultdict(list)
        self.parked: Dict[str, List[EntangledResource]] = defaultdict(list)  # parent conn -> pairs

    # ------------------------------------------------------------------ util

    @property
    def sim(self):
        return self.host.sim

    @property
    def measures_on_arrival(self) -> bool:
        return self.node_type == "MEAS"

    def fault(self, kind: str, detail: str) -> None:
        self.faults[kind] += 1
        self.fault_log.append((self.sim.now, kind, detail))
        log.debug("fault at %s: %s %s", self.node, kind, detail)

    def live_resources(self) -> List[EntangledResource]:
        return list(self.name_index.values())

    # ---------------------------------------------------------- installation

    def install(self, rs: RuleSet) -> None:
        if rs.connection_id in self.rulesets:
            return
        inst = self.rulesets[rs.connection_id] = InstalledRuleSet(rs, self.sim.now)
        for res in self.parked.pop(rs.connection_id, ()):
            if res.state == "live":
                self._splice(inst, res)
        for src, msg in self.awaiting.pop(rs.connection_id, ()):
            self.on_message(src, msg)
        self.evaluate(inst)

    def uninstall(self, connection_id: str) -> int:
        """Drop the RuleSet and free everything it owns.  Returns the count freed."""
        self.rulesets.pop(connection_id, None)
        self.removed.add(connection_id)
        self.awaiting.pop(connection_id, None)
        self.parked.pop(connection_id, None)
        freed = 0
        for res in list(self.name_index.values()):
            if res.connection == connection_id:
                self._terminate(res, FREED)
                freed += 1
        for key in [k for k, p in self.purifications.items() if p.kept.connection == connection_id]:
            del self.purifications[key]
        for key in [k for k, m in self.early_results.items() if m.connection_id == connection_id]:
            del self.early_results[key]
        for name in [n for n, msgs in self.deferred.items()
                     if all(m.connection_id == connection_id for m in msgs)]:
            del self.deferred[name]
        return freed

    # -------------------------------------------------------------- arrivals

    def on_resource_arrival(self, res: EntangledResource) -> None:
        """A fresh link-level half; the multiplexer has already set ``connection``."""
        if self.measures_on_arrival:
            self._measure_on_arrival(res)
        self.name_index[res.name] = res
        inst = self.rulesets.get(res.connection) if res.connection else None
        if inst is None:
            res.connection = None
            self.unassigned[res.name] = res
        else:
            self._place(inst, res, 0)
        self._replay_deferred(res.name)
        if inst is not None:
            self.evaluate(inst)

    def _measure_on_arrival(self, res: EntangledResource) -> None:
        basis = self.meas_basis
        if basis == "RANDOM":
            basis = "Z" if self.sim.rng.random() < 0.5 else "X"
        res.measured = True
        res.pair.meas[self.node] = {"basis": basis, "time": self.sim.now}

    def _place(self, inst: InstalledRuleSet, res: EntangledResource, stage: int) -> None:
        res.assign(inst.rs.ruleset_id, stage)
        res.connection = inst.rs.connection_id
        inst.stage_resources[stage].append(res)

    def free_unassigned(self, name: ExternalName) -> bool:
        res = self.unassigned.get(name)
        if res is None:
            return False
        self._terminate(res, FREED)
        return True

    # ------------------------------------------------------------ evaluation

    def evaluate(self, inst: InstalledRuleSet) -> None:
        """Fire first-matching rules until no stage of ``inst`` can fire."""
        if self._evaluating:
            self._dirty[inst.rs.connection_id] = None
            return
        self._evaluating = True
        try:
            self._fixpoint(inst)
            while self._dirty:
                cid = next(iter(self._dirty))
                del self._dirty[cid]
                other = self.rulesets.get(cid)
                if other is not None:
                    self._fixpoint(other)
        finally:
            self._evaluating = False

    def _fixpoint(self, inst: InstalledRuleSet) -> None:
        guard = 0
        progressed = True
        while progressed:
            progressed = False
            if self.rulesets.get(inst.rs.connection_id) is not inst:
                return
            for stage in inst.rs.stages:
                if self._fire_first(inst, stage):
                    progressed = True
                    guard += 1
                    if guard > 100_000:
                        raise RuntimeError(f"{self.node}: rule evaluation does not converge")
                    break

    def _fire_first(self, inst: InstalledRuleSet, stage) -> bool:
        pool = inst.stage_resources[stage.stage_id]
        tokens = inst.tokens[stage.stage_id]
        if not pool and not tokens:
            return False
        variables = inst.variables[stage.stage_id]
        for rule in stage.rules:
            match = self._match(rule, pool, tokens, variables)
            if match is not None:
                refs, used_tokens = match
                for t in used_tokens:
                    tokens.remove(t)
                inst.firings[(stage.stage_id, rule.rule_id)] += 1
                self.firings += 1
                if self.sim.trace is not None:
                    self.sim.trace.write(
                        f"{self.sim.now} RuleFire {self.node} {self.node} "
                        f"conn={inst.rs.connection_id} stage={stage.stage_id} rule={rule.rule_id}\n")
                self._execute(inst, stage.stage_id, rule, refs)
                return True
        return False

    def _match(self, rule: Rule, pool, tokens, variables):
        refs: List[Optional[EntangledResource]] = []
        used_tokens: List[TimerToken] = []
        taken = set()
        for c in rule.conditions:
            if isinstance(c, Cmp):
                if not c.holds(variables.get(c.variable, 0)):
                    return None
            elif isinstance(c, Res):
                got = []
                for r in pool:
                    if r.pending or id(r) in taken:
                        continue
                    if c.partner != WILDCARD and r.partner_node != c.partner:
                        continue
                    if r.est_fidelity_at(self.sim.now) + 1e-12 < c.min_fidelity:
                        continue
                    got.append(r)
                    if len(got) == c.count:
                        break
                if len(got) < c.count:
                    return None
                for r in got:
                    taken.add(id(r))
                refs.extend(got)
            elif isinstance(c, Timer):
                tok = None
                for t in tokens:
                    if t.timer_id != c.timer_id or t in used_tokens:
                        continue
                    r = t.resource
                    if r is not None and (r.pending or id(r) in taken or r.state != "live"):
                        continue
                    tok = t
                    break
                if tok is None:
                    return None
                used_tokens.append(tok)
                if tok.resource is not None:
                    taken.add(id(tok.resource))
                refs.append(tok.resource)
        return refs, used_tokens

    # -------------------------------------------------------------- actions

    def _execute(self, inst: InstalledRuleSet, stage_id: int, rule: Rule, refs: list) -> None:
        refs = list(refs)
        purify: Optional[PendingPurification] = None
        swap: Optional[PendingSwapRecord] = None
        circuit_cat: Dict[int, str] = {}
        for a in rule.actions:
            if isinstance(a, QCirc):
                rs = [refs[i] for i in a.refs]
                if len(rs) != 2 or any(r is None or r.state != "live" for r in rs):
                    self.fault("double_consumption",
                               f"QCIRC on a consumed resource in {inst.rs.ruleset_id}")
                    continue
                i, j = a.refs
                if a.circuit == "PURIFY_PAIR":
                    # the pair with the smaller name survives, at both ends
                    if refs[j].name < refs[i].name:
                        refs[i], refs[j] = refs[j], refs[i]
                    purify = self._purify(refs[i], refs[j])
                    circuit_cat[j] = PURIFIED
                else:
                    swap = self._swap(refs[i], refs[j])
                    circuit_cat[i] = circuit_cat[j] = SWAPPED
            elif isinstance(a, Meas):
                for i in a.refs:
                    r = refs[i]
                    if r is None or r.state != "live":
                        continue
                    if i in circuit_cat:
                        self._terminate(r, circuit_cat[i])
                    else:
                        self._deliver(inst, r, a.basis)
            elif isinstance(a, Promote):
                for i in a.refs:
                    r = refs[i]
                    if r is None or r.state != "live" or i in circuit_cat:
                        continue
                    self._cancel_timers(r)
                    if a.target_stage == DELIVER_STAGE:
                        self._deliver(inst, r, None)
                    else:
                        self._move(inst, r, a.target_stage)
            elif isinstance(a, Free):
                for i in a.refs:
                    r = refs[i]
                    if r is not None and r.state == "live":
                        self._terminate(r, FREED)
            elif isinstance(a, SetVar):
                vars_ = inst.variables[stage_id]
                vars_[a.variable] = (vars_.get(a.variable, 0) + a.value) if a.relative else a.value
            elif isinstance(a, SetTimer):
                bound = [r for r in refs if r is not None and r.state == "live"]
                if not bound:
                    self._set_timer(inst, stage_id, a, None)
                for r in bound:
                    self._set_timer(inst, r.owner[1], a, r)
            elif isinstance(a, Send):
                self._send(inst, a, refs, purify, swap)
        for i, cat in circuit_cat.items():
            r = refs[i]
            if r is not None and r.state == "live":
                self._terminate(r, cat)
        if purify is not None:
            self._maybe_resolve(purify)

    def _move(self, inst: InstalledRuleSet, r: EntangledResource, stage: int) -> None:
        _, old = r.owner
        lst = inst.stage_resources[old]
        lst.remove(r)
        inst.tokens[old] = [t for t in inst.tokens[old] if t.resource is not r]
        r.assign(inst.rs.ruleset_id, stage)
        inst.stage_resources[stage].append(r)
        inst.stage_resources[stage].sort(key=EntangledResource.sort_key)

    # ---------------------------------------------------------- purification

    def _purify(self, kept: EntangledResource, sac: EntangledResource) -> PendingPurification:
        now = self.sim.now
        key = frozenset((kept.name, sac.name))
        outcome = self.host.purification_truth(key, kept.pair, sac.pair, now, self.node)
        local_bit = outcome.bits[0] if outcome.first == self.node else outcome.bits[1]
        _, F_est = purify_outcome(kept.est_fidelity_at(now), sac.est_fidelity_at(now))
        kept.set_est(F_est, now)
        kept.pending = True
        pend = PendingPurification(kept, sac.name, local_bit, outcome.round)
        self.purifications[key] = pend
        return pend

    def _maybe_resolve(self, pend: PendingPurification) -> None:
        key = frozenset((pend.kept.name, pend.sacrificed_name))
        msg = self.early_results.pop(key, None)
        if msg is not None:
            self._resolve(key, pend, msg)

    def _resolve(self, key, pend: PendingPurification, msg: MeasResultMsg) -> None:
        self.purifications.pop(key, None)
        kept = pend.kept
        if kept.state != "live":
            return
        kept.pending = False
        if msg.parity == pend.local_bit:
            inst = self.rulesets.get(kept.connection)
            if inst is not None:
                self.evaluate(inst)
        else:
            self._terminate(kept, PURIFIED)

    # ------------------------------------------------------------- swapping

    def _swap(self, r0: EntangledResource, r1: EntangledResource) -> PendingSwapRecord:
        now = self.sim.now
        new_pair = self.host.swap_truth(self.node, r0, r1, now)
        est = swap_fidelity(r0.est_fidelity_at(now), r1.est_fidelity_at(now))
        rng = self.sim.rng
        correction = PAULIS[rng.randrange(4)]
        self.swaps += 1
        return PendingSwapRecord(new_pair.name, (r0.name, r1.name),
                                 (r0.partner_node, r1.partner_node),
                                 {r0.partner_node: "I", r1.partner_node: correction}, est)

    # ------------------------------------------------------------- messages

    def _send(self, inst, a: Send, refs, purify, swap) -> None:
        cid = inst.rs.connection_id
        r = refs[a.ref] if a.ref < len(refs) else None
        if a.kind == "TRANSFER":
            if swap is None or r is None:
                return
            idx = swap.old_names.index(r.name) if r.name in swap.old_names else a.ref
            dest = a.dest or swap.partners[idx]
            other = swap.partners[1 - idx]
            corr = swap.corrections[dest] if a.with_correction else "I"
            msg = TransferMsg(cid, self.node, (swap.old_names[idx],), new_partner=other,
                              new_name=swap.new_name, pauli_correction=corr,
                              est_fidelity=swap.est_fidelity)
            swap.notified.add(dest)
        elif a.kind == "MEAS_RESULT":
            if purify is None:
                return
            dest = a.dest or purify.kept.partner_node
            msg = MeasResultMsg(cid, self.node, (purify.kept.name, purify.sacrificed_name),
                                parity=purify.local_bit, round=purify.round)
        elif a.kind == "FREE":
            if r is None:
                return
            dest = a.dest or r.partner_node
            msg = FreeMsg(cid, self.node, (r.name,))
        else:
            if r is None:
                return
            dest = a.dest or r.partner_node
            msg = UpdateMsg(cid, self.node, (r.name,), pauli_correction="I")
        self.host.send(self.node, dest, msg)

    def on_message(self, src: str, msg: ProtocolMessage) -> None:
        if msg.connection_id not in self.rulesets:
            if msg.connection_id not in self.removed:
                # RuleSet still on its way; pairs spliced up from a lower layer can race it
                self.awaiting[msg.connection_id].append((src, msg))
            return
        if isinstance(msg, MeasResultMsg):
            self._on_meas_result(msg)
        elif isinstance(msg, TransferMsg):
            self._on_transfer(msg)
        elif isinstance(msg, FreeMsg):
            self._on_free(msg)
        elif isinstance(msg, UpdateMsg):
            self._on_update(msg)

    def _lookup(self, name, msg) -> Optional[EntangledResource]:
        res = self.name_index.get(name)
        if res is not None:
            return res
        if name in self.tombstones:
            return None
        self.deferred[name].append(msg)
        return None

    def _replay_deferred(self, name) -> None:
        msgs = self.deferred.pop(name, None)
        for m in msgs or ():
            self.on_message(m.sender, m)

    def _on_meas_result(self, msg: MeasResultMsg) -> None:
        key = frozenset(msg.names)
        pend = self.purifications.get(key)
        if pend is not None:
            self._resolve(key, pend, msg)
            return
        kept_name, sac_name = msg.names
        if kept_name in self.tombstones and self.tombstones[kept_name] != PURIFIED:
            self.fault("discard_race", f"MEAS_RESULT for freed {kept_name}")
            return
        res = self.name_index.get(kept_name)
        other = self.name_index.get(sac_name)
        if res is not None and other is not None:
            self.early_results[key] = msg  # our half of the round has not run yet
            return
        if res is None and kept_name not in self.tombstones:
            self.deferred[kept_name].append(msg)
            return
        self.fault("unknown_round", f"MEAS_RESULT {kept_name}/{sac_name} round {msg.round}")

    def _on_transfer(self, msg: TransferMsg) -> None:
        old = msg.names[0]
        if old in self.tombstones:
            if self.tombstones[old] == FREED:
                self.fault("discard_race", f"TRANSFER for freed {old}")
                # let the far end release its half instead of waiting for a timer
                self.host.send(self.node, msg.new_partner,
                               FreeMsg(msg.connection_id, self.node, (msg.new_name,)))
            else:
                self.fault("double_consumption", f"TRANSFER for consumed {old}")
            return
        res = self._lookup(old, msg)
        if res is None:
            return
        if res.partner_node != msg.sender:
            self.fault("partner_mismatch", f"TRANSFER for {old} from {msg.sender}, "
                                           f"partner is {res.partner_node}")
            return
        del self.name_index[old]
        self.tombstones[old] = "renamed"
        pair = self.host.pairs[msg.new_name]
        self.host.half_renamed(self.node, res.pair)
        res.name = msg.new_name
        res.birth_time = msg.new_name.timestamp
        res.partner_node = msg.new_partner
        res.pair = pair
        res.pauli = compose_pauli(res.pauli, msg.pauli_correction)
        res.set_est(msg.est_fidelity, self.sim.now)
        res.est_rate = 0.0
        self.name_index[res.name] = res
        inst = self.rulesets.get(res.connection) if res.owner is not None else None
        if inst is not None:
            stage = inst.stage_resources[res.owner[1]]
            stage.sort(key=EntangledResource.sort_key)
        self._replay_deferred(res.name)
        if inst is not None and res.state == "live":
            self.evaluate(inst)

    def _on_free(self, msg: FreeMsg) -> None:
        for name in msg.names:
            if name in self.tombstones:
                continue
            res = self._lookup(name, msg)
            if res is None:
                continue
            self._cancel_timers(res)
            self._terminate(res, FREED)
            for key in [k for k, p in self.purifications.items() if p.kept is res]:
                del self.purifications[key]

    def _on_update(self, msg: UpdateMsg) -> None:
        for name in msg.names:
            res = self._lookup(name, msg)
            if res is not None:
                res.pauli = compose_pauli(res.pauli, msg.pauli_correction)

    # --------------------------------------------------------------- timers

    def _set_timer(self, inst: InstalledRuleSet, stage_id: int, a: SetTimer,
                   res: Optional[EntangledResource]) -> None:
        payload = (inst.rs.connection_id, a.timer_id, res, stage_id)
        ev = self.sim.schedule_in(a.duration, TIMER, self.node, self._on_timer, payload)
        if res is not None:
            res.timers.append(ev)

    def _on_timer(self, ev) -> None:
        cid, timer_id, res, stage_id = ev.payload
        inst = self.rulesets.get(cid)
        if inst is None:
            return
        if res is not None:
            if ev in res.timers:
                res.timers.remove(ev)
            if res.state != "live":
                return  # consumed meanwhile; token ignored
            stage_id = res.owner[1]
        inst.tokens[stage_id].append(TimerToken(timer_id, res, self.sim.now))
        self.evaluate(inst)

    def _cancel_timers(self, res: EntangledResource) -> None:
        for ev in res.timers:
            ev.cancelled = True
        res.timers.clear()

    # ------------------------------------------------------------- terminal

    def _terminate(self, res: EntangledResource, category: str) -> None:
        if res.state != "live":
            self.fault("double_consumption", f"{res.name} already {res.state}")
            return
        self._cancel_timers(res)
        res.state = category
        self.name_index.pop(res.name, None)
        self.unassigned.pop(res.name, None)
        self.tombstones[res.name] = category
        if res.owner is not None:
            inst = self.rulesets.get(res.connection)
            if inst is not None:
                lst = inst.stage_resources.get(res.owner[1])
                if lst is not None and res in lst:
                    lst.remove(res)
                toks = inst.tokens.get(res.owner[1])
                if toks:
                    inst.tokens[res.owner[1]] = [t for t in toks if t.resource is not res]
        self.host.half_terminated(self.node, res, category)

    def _deliver(self, inst: InstalledRuleSet, res: EntangledResource, basis: Optional[str]) -> None:
        parent = self.host.glue_parent(self.node, inst.rs.connection_id)
        if parent is not None:
            self._handoff(inst, res, parent)
            return
        now = self.sim.now
        if basis is not None and not res.measured:
            b = basis
            if b == "RANDOM":
                b = "Z" if self.sim.rng.random() < 0.5 else "X"
            res.pair.meas[self.node] = {"basis": b, "time": now}
            res.measured = True
        inst.delivered += 1
        self._terminate(res, DELIVERED)
        self.host.delivered(self.node, inst, res)

    def _handoff(self, inst: InstalledRuleSet, res: EntangledResource, parent: str) -> None:
        """Splice a pair delivered by a lower-layer connection into the
        enclosing connection's first stage, keeping its external name."""
        self._cancel_timers(res)
        stage = res.owner[1]
        inst.stage_resources[stage].remove(res)
        inst.tokens[stage] = [t for t in inst.tokens[stage] if t.resource is not res]
        inst.delivered += 1
        res.owner = None
        pinst = self.rulesets.get(parent)
        if pinst is None:
            # enclosing RuleSet not installed here yet; hold the pair until it is
            self.parked[parent].append(res)
            return
        self._splice(pinst, res)
        self.evaluate(pinst)

    def _splice(self, pinst: InstalledRuleSet, res: EntangledResource) -> None:
        parent = pinst.rs.connection_id
        child = res.connection
        advertised = self.host.advertised_fidelity(parent, self.node, res.partner_node)
        if advertised is not None and res.est_fidelity_at(self.sim.now) + 1e-9 < advertised:
            self.fault("fidelity_shortfall", f"{res.name} below advertised {advertised:.6f}")
        res.connection = parent
        res.pair.connection = parent
        self._place(pinst, res, 0)
        pinst.stage_resources[0].sort(key=EntangledResource.sort_key)
        self.host.handed_off(self.node, child, parent, res)
