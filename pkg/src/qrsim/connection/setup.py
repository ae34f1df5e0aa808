"""Two-pass connection setup and teardown, run as message handlers.

Outbound: the request is source-routed along the qDijkstra path; each node
admits the connection with the multiplexer and appends the LinkInfo of its
outgoing hop.  A hop through a sub-network suspends the request and starts a
child setup across that network; the child's Responder resumes the parent
with a single virtual-hop LinkInfo once the child RuleSets are sent.

Return: the Responder generates, validates and verifies every RuleSet and
sends each node its own.  Nearer nodes receive theirs first, so installation
completes back to front.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

from ..link import seconds_per_pair
from ..ruleset import RuleSet, decode_ruleset, encode_ruleset, validate_ruleset
from .generator import GeneratorPolicy, describe_plan, generate_rulesets
from .request import (ConnectionRequest, InstallAckMsg, InstallMsg, LinkInfo, Requirements,
                      SetupError, SetupFailureMsg, SetupRequestMsg, TeardownMsg)
from .verifier import DEFAULT_BOUND, VerifierReport, verification_key, verify_rulesets

log = logging.getLogger(__name__)


@dataclass
class ConnectionRecord:
    connection_id: str
    initiator: str
    responder: str
    requirements: Requirements
    requested_at: int
    layer: int = 0
    network: str = ""
    route: Tuple[str, ...] = ()
    hops: Tuple[Tuple[str, str], ...] = ()
    parent: Optional[str] = None
    children: List[str] = field(default_factory=list)
    status: str = "pending"
    reason: str = ""
    established_at: Optional[int] = None
    installed: Dict[str, int] = field(default_factory=dict)
    acks: set = field(default_factory=set)
    torn_down_at: Dict[str, int] = field(default_factory=dict)
    request_messages: int = 0
    install_messages: int = 0
    report: Optional[VerifierReport] = None
    plan: Optional[dict] = None
    advertised: Dict[frozenset, float] = field(default_factory=dict)  # virtual hop -> fidelity
    qubits: int = 2
    weight: float = 1.0

    @property
    def setup_latency(self) -> Optional[int]:
        if self.established_at is None:
            return None
        return self.established_at - self.requested_at


class ConnectionManager:
    def __init__(self, net, policy: GeneratorPolicy = GeneratorPolicy(), verify: bool = True,
                 verify_bound: int = DEFAULT_BOUND):
        self.net = net
        self.policy = policy
        self.verify = verify
        self.verify_bound = verify_bound
        self.records: Dict[str, ConnectionRecord] = {}
        self.request_log: List[Tuple[int, str, bytes]] = []  # (layer, network, serialized request)
        self.warnings: List[str] = []
        self._verified: Dict[str, VerifierReport] = {}  # structurally identical problems

    # ------------------------------------------------------------- outbound

    def initiate(self, connection_id: str, initiator: str, responder: str,
                 requirements: Requirements, qubits: int = 2, weight: float = 1.0,
                 parent: Optional[ConnectionRequest] = None, route=None) -> str:
        if connection_id in self.records:
            raise SetupError(f"duplicate connection id {connection_id}")
        net = self.net
        rec = ConnectionRecord(connection_id, initiator, responder, requirements, net.sim.now,
                               qubits=qubits, weight=weight,
                               parent=parent.connection_id if parent is not None else None)
        self.records[connection_id] = rec
        net.register_connection(rec)
        if route is None:
            route = net.topology.route(initiator, responder, requirements.min_fidelity)
        if route is None:
            self._fail_local(rec, f"no route from {initiator} to {responder}", initiator)
            return connection_id
        rec.route, rec.hops, rec.layer, rec.network = route.path, route.hops, route.layer, route.network
        req = ConnectionRequest(connection_id, initiator, responder, requirements, route.path,
                                route.hops, route.layer, qubits=qubits, weight=weight, parent=parent)
        self._at_node(initiator, req)
        return connection_id

    def _at_node(self, node: str, req: ConnectionRequest) -> None:
        rec = self.records[req.connection_id]
        if rec.status != "pending":
            return
        net = self.net
        i = req.index
        hop = req.hops[i] if i < len(req.hops) else None
        ok, reason = net.mux.admit_hop(req.connection_id, node,
                                       hop[1] if hop and hop[0] == "link" else None,
                                       req.qubits, req.weight)
        if not ok:
            self._fail(rec, f"admission refused at {node}: {reason}", node)
            return
        req = replace(req, node_types=list(req.node_types) + [net.topology.nodes[node].node_type])
        if hop is None:
            self._respond(node, req)
            return
        nxt = req.route[i + 1]
        if hop[0] == "virtual":
            self._descend(node, nxt, hop[1], req)
            return
        spec = net.topology.links[hop[1]]
        info = LinkInfo((node, nxt), seconds_per_pair(spec), spec.base_fidelity,
                        net.free_qubits(node, spec.link_id), net.fabric.latency(node, nxt))
        out = replace(req, accumulated=list(req.accumulated) + [info], index=i + 1)
        self._send_request(node, nxt, out)

    def _send_request(self, src: str, dst: str, req: ConnectionRequest) -> None:
        self.records[req.connection_id].request_messages += 1
        self.request_log.append((req.layer, self.records[req.connection_id].network, req.to_bytes()))
        self.net.send(src, dst, SetupRequestMsg(req))

    def _descend(self, node: str, nxt: str, network: str, req: ConnectionRequest) -> None:
        rec = self.records[req.connection_id]
        topo = self.net.topology
        vl = topo.virtual_link(network, node, nxt)
        route = topo.child_route(network, node, nxt)
        if vl is None or route is None:
            self._fail(rec, f"no path through network {network!r} from {node} to {nxt}", node)
            return
        child_id = f"{req.connection_id}/{network}#{req.index}"
        rec.children.append(child_id)
        rec.advertised[frozenset((node, nxt))] = vl.fidelity
        self.net.glue[(node, child_id)] = req.connection_id
        self.initiate(child_id, node, nxt, Requirements(vl.fidelity), req.qubits, req.weight,
                      parent=req, route=route)

    def _resume_parent(self, node: str, child: ConnectionRequest) -> None:
        parent = child.parent
        prec = self.records[parent.connection_id]
        if prec.status != "pending":
            return
        u = parent.route[parent.index]
        network = parent.hops[parent.index][1]
        vl = self.net.topology.virtual_link(network, u, node)
        self.net.glue[(node, child.connection_id)] = parent.connection_id
        info = LinkInfo((u, node), vl.seconds_per_pair, vl.fidelity, 0,
                        self.net.fabric.latency(u, node), virtual=True)
        resumed = replace(parent, accumulated=list(parent.accumulated) + [info],
                          index=parent.index + 1)
        self._at_node(node, resumed)

    # -------------------------------------------------------------- responder

    def _respond(self, node: str, req: ConnectionRequest) -> None:
        rec = self.records[req.connection_id]
        try:
            rulesets = generate_rulesets(req, self.policy)
            rec.plan = describe_plan(req)
        except SetupError as exc:
            self._fail(rec, exc.reason, node)
            return
        problems = [str(v) for rs in rulesets.values() for v in validate_ruleset(rs)]
        if problems:
            self._fail(rec, "invalid RuleSet: " + "; ".join(problems), node)
            return
        if self.verify:
            lat = [li.latency for li in req.accumulated]
            key = verification_key(rulesets, req.route, lat)
            rep = self._verified.get(key)
            if rep is None:
                rep = self._verified[key] = verify_rulesets(rulesets, req.route, lat,
                                                            bound=self.verify_bound)
            rec.report = rep
            if rep.findings:
                self._fail(rec, "verifier: " + "; ".join(str(f) for f in rep.findings), node)
                return
            if rep.inconclusive:
                self.warnings.append(f"{rec.connection_id}: verification inconclusive "
                                     f"after {rep.states} states")
        for n in req.route:
            rec.install_messages += 1
            self.net.send(node, n, InstallMsg(req.connection_id, encode_ruleset(rulesets[n]), req.layer))
        if req.parent is not None:
            self._resume_parent(node, req)

    # ---------------------------------------------------------------- return

    def on_message(self, src: str, dst: str, msg) -> None:
        if isinstance(msg, SetupRequestMsg):
            self._at_node(dst, msg.request)
        elif isinstance(msg, InstallMsg):
            self._on_install(src, dst, msg)
        elif isinstance(msg, InstallAckMsg):
            self._on_ack(dst, msg)
        elif isinstance(msg, SetupFailureMsg):
            self._on_failure(dst, msg)
        elif isinstance(msg, TeardownMsg):
            self._teardown_at(dst, msg.connection_id, src)
        else:
            raise TypeError(f"unexpected control message {msg!r}")

    def _on_install(self, src: str, node: str, msg: InstallMsg) -> None:
        rec = self.records.get(msg.connection_id)
        if rec is None or rec.status not in ("pending", "established") or node in rec.torn_down_at:
            return
        rs = decode_ruleset(msg.payload)
        self.net.engines[node].install(rs)
        rec.installed[node] = self.net.sim.now
        self.net.on_installed(rec, node)
        self.net.send(node, rec.initiator, InstallAckMsg(msg.connection_id, node))

    def _on_ack(self, node: str, msg: InstallAckMsg) -> None:
        rec = self.records.get(msg.connection_id)
        if rec is None or rec.status != "pending":
            return
        rec.acks.add(msg.node)
        self._check_established(rec)

    def _check_established(self, rec: ConnectionRecord) -> None:
        # a connection with sub-network segments waits for every child
        if rec.status != "pending" or len(rec.acks) < len(rec.route):
            return
        if any(self.records[c].status != "established" for c in rec.children):
            return
        rec.status = "established"
        rec.established_at = self.net.sim.now
        if rec.parent is not None:
            self._check_established(self.records[rec.parent])

    # ---------------------------------------------------------------- failure

    def _fail_local(self, rec: ConnectionRecord, reason: str, node: str) -> None:
        rec.status = "failed"
        rec.reason = reason
        self.net.mux.release(rec.connection_id)
        log.info("connection %s failed: %s", rec.connection_id, reason)
        if rec.parent is not None:
            prec = self.records[rec.parent]
            if prec.status == "pending":
                self._fail(prec, f"child {rec.connection_id} failed: {reason}", node)

    def _fail(self, rec: ConnectionRecord, reason: str, node: str) -> None:
        if rec.status != "pending":
            return
        rec.status = "failing"
        rec.reason = reason
        self.net.mux.release(rec.connection_id)
        self.net.send(node, rec.initiator, SetupFailureMsg(rec.connection_id, reason, node))

    def _on_failure(self, node: str, msg: SetupFailureMsg) -> None:
        rec = self.records.get(msg.connection_id)
        if rec is None or rec.status in ("failed", "torn_down"):
            return
        rec.status = "pending"  # let _fail_local finalize
        self._fail_local(rec, msg.reason, node)
        for child in rec.children:
            crec = self.records.get(child)
            if crec is not None and crec.status in ("pending", "established"):
                self.net.send(node, crec.initiator, TeardownMsg(child, node))
        for n in rec.installed:
            if n not in rec.torn_down_at:
                self.net.send(node, n, TeardownMsg(rec.connection_id, node))

    # --------------------------------------------------------------- teardown

    def teardown(self, connection_id: str, node: Optional[str] = None) -> None:
        rec = self.records.get(connection_id)
        if rec is None:
            self.warnings.append(f"teardown of unknown connection {connection_id}")
            log.warning("teardown of unknown connection %s", connection_id)
            return
        self._teardown_at(node or rec.initiator, connection_id, None)

    def _teardown_at(self, node: str, connection_id: str, sender: Optional[str]) -> None:
        rec = self.records.get(connection_id)
        if rec is None or node in rec.torn_down_at:
            return
        if not rec.torn_down_at:
            if rec.status != "failed":
                rec.status = "torn_down"
            self.net.mux.release(connection_id)
        rec.torn_down_at[node] = self.net.sim.now
        engine = self.net.engines.get(node)
        if engine is not None:
            engine.uninstall(connection_id)
        self.net.on_uninstalled(rec, node)
        if node in rec.route:
            i = rec.route.index(node)
            for j in (i - 1, i + 1):
                if 0 <= j < len(rec.route) and rec.route[j] != sender:
                    self.net.send(node, rec.route[j], TeardownMsg(connection_id, node))
        for child in rec.children:
            crec = self.records.get(child)
            if crec is not None and node in (crec.initiator, crec.responder):
                self._teardown_at(node, child, None)
        for key in [k for k in self.net.glue if k[0] == node and k[1] == connection_id]:
            del self.net.glue[key]

    def advertised(self, parent: str, u: str, v: str) -> Optional[float]:
        rec = self.records.get(parent)
        if rec is None:
            return None
        return rec.advertised.get(frozenset((u, v)))


# ---------------------------------------------------------------------------
# offline planning


@dataclass
class OfflinePlan:
    connection_id: str
    route: Tuple[str, ...]
    layer: int
    network: str
    error: Optional[str] = None
    report: Optional[VerifierReport] = None
    plan: Optional[dict] = None
    rulesets: Optional[Dict[str, RuleSet]] = None
    latencies: Tuple[int, ...] = ()


def plan_offline(net, connection_id: str, initiator: str, responder: str,
                 requirements: Requirements, policy: GeneratorPolicy = GeneratorPolicy(),
                 bound: int = DEFAULT_BOUND, route=None) -> List[OfflinePlan]:
    """Run the outbound pass and RuleSet generation without executing events.

    Assumes every memory is free.  Returns one entry per layer segment, the
    connection itself first.
    """
    topo = net.topology
    if route is None:
        route = topo.route(initiator, responder, requirements.min_fidelity)
    if route is None:
        return [OfflinePlan(connection_id, (), 0, "", f"no route from {initiator} to {responder}")]
    out = [OfflinePlan(connection_id, route.path, route.layer, route.network)]
    infos: List[LinkInfo] = []
    for i, (kind, key) in enumerate(route.hops):
        u, v = route.path[i], route.path[i + 1]
        if kind == "virtual":
            vl = topo.virtual_link(key, u, v)
            child = topo.child_route(key, u, v)
            if vl is None or child is None:
                out[0].error = f"no path through network {key!r} from {u} to {v}"
                return out
            out += plan_offline(net, f"{connection_id}/{key}#{i}", u, v, Requirements(vl.fidelity),
                                policy, bound, child)
            infos.append(LinkInfo((u, v), vl.seconds_per_pair, vl.fidelity, 0,
                                  net.fabric.latency(u, v), virtual=True))
        else:
            spec = topo.links[key]
            infos.append(LinkInfo((u, v), seconds_per_pair(spec), spec.base_fidelity,
                                  spec.qubit_capacity, net.fabric.latency(u, v)))
    req = ConnectionRequest(connection_id, initiator, responder, requirements, route.path,
                            route.hops, route.layer, accumulated=infos, index=len(route.hops),
                            node_types=[topo.nodes[n].node_type for n in route.path])
    try:
        rulesets = generate_rulesets(req, policy)
        out[0].plan = describe_plan(req)
    except SetupError as exc:
        out[0].error = exc.reason
        return out
    problems = [str(v) for rs in rulesets.values() for v in validate_ruleset(rs)]
    if problems:
        out[0].error = "invalid RuleSet: " + "; ".join(problems)
        return out
    out[0].rulesets = rulesets
    out[0].latencies = tuple(li.latency for li in infos)
    out[0].report = verify_rulesets(rulesets, route.path, out[0].latencies, bound=bound)
    return out
