"""Scenario files: YAML topology and scenario descriptions.

Every problem found is collected and reported together, each with the file
line and the field path it refers to.  See ``docs/config.md`` for the
grammar.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import yaml

from .connection.generator import GeneratorPolicy
from .connection.verifier import DEFAULT_BOUND
from .internetwork import ROOT, NetworkGroup, Topology
from .kernel import DEFAULT_LOOPBACK, FIBER_VELOCITY, MS, ClassicalChannel, ticks
from .link import ARCHITECTURES, NODE_TYPES, LinkSpec, NodeCapability
from .routing import DISCIPLINES
from .ruleset.model import BASES

TOPOLOGY_KEYS = ("nodes", "links", "channels", "networks")
SCENARIO_KEYS = ("seed", "duration", "discipline", "tdm_slice", "loopback", "staleness_factor",
                 "app_hold", "verify", "verify_bound", "policy", "connections")


class ConfigError(Exception):
    def __init__(self, errors: Sequence[str]):
        super().__init__("\n".join(errors))
        self.errors = list(errors)


@dataclass(frozen=True)
class ConnectionSpec:
    connection_id: str
    initiator: str
    responder: str
    min_fidelity: float
    start: float = 0.0
    mode: str = "stream"
    count: int = 0
    qubits: int = 2
    weight: float = 1.0
    stop: Optional[float] = None


@dataclass
class ScenarioConfig:
    topology: Topology
    connections: List[ConnectionSpec] = field(default_factory=list)
    channels: List[ClassicalChannel] = field(default_factory=list)
    processing_delay: Dict[str, int] = field(default_factory=dict)
    discipline: str = "statmux"
    seed: int = 0
    duration: float = 1.0
    tdm_slice: int = MS
    loopback: int = DEFAULT_LOOPBACK
    staleness_factor: float = 10.0
    app_hold: int = 0
    verify: bool = True
    verify_bound: int = DEFAULT_BOUND
    policy: GeneratorPolicy = GeneratorPolicy()
    sources: Tuple[str, ...] = ()


# ---------------------------------------------------------------------------
# YAML with line numbers

def _lines(node, path: str, out: Dict[str, int]) -> None:
    out.setdefault(path, node.start_mark.line + 1)
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = k.value
            sub = f"{path}.{key}" if path else str(key)
            out.setdefault(sub, k.start_mark.line + 1)
            _lines(v, sub, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _lines(v, f"{path}[{i}]", out)


def _load_yaml(path: str, errors: List[str]) -> Tuple[Optional[dict], Dict[str, int]]:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        errors.append(f"{path}: cannot read: {exc.strerror}")
        return None, {}
    try:
        data = yaml.safe_load(text)
        node = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{path}:{mark.line + 1}" if mark is not None else path
        problem = getattr(exc, "problem", None) or str(exc)
        errors.append(f"{where}: parse error: {problem}")
        return None, {}
    if data is None:
        data = {}
    if not isinstance(data, dict):
        errors.append(f"{path}:1: top level must be a mapping")
        return None, {}
    lines: Dict[str, int] = {}
    if node is not None:
        _lines(node, "", lines)
    return data, lines


class _Checker:
    def __init__(self, lines: Dict[str, Tuple[str, int]]):
        self.lines = lines
        self.errors: List[str] = []

    def err(self, path: str, msg: str) -> None:
        probe = path
        while probe and probe not in self.lines:
            probe = probe.rsplit(".", 1)[0] if "." in probe else probe.split("[")[0] if "[" in probe else ""
        src, line = self.lines.get(probe, ("<config>", 0))
        self.errors.append(f"{src}:{line}: {path}: {msg}")

    def get(self, d: dict, key: str, path: str, kind, default=None, required=False,
            lo=None, hi=None, lo_open=False):
        full = f"{path}.{key}" if path else key
        if key not in d or d[key] is None:
            if required:
                self.err(path or key, f"missing required field '{key}'")
            return default
        v = d[key]
        if kind is float:
            if isinstance(v, str):
                # YAML 1.1 reads 1.0e4 (no exponent sign) as a string
                try:
                    v = float(v.strip().lstrip("."))
                except ValueError:
                    pass
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                self.err(full, f"expected a number, got {v!r}")
                return default
            v = float(v)
            if math.isnan(v):
                self.err(full, "must not be NaN")
                return default
        elif kind is int:
            if isinstance(v, bool) or not isinstance(v, int):
                self.err(full, f"expected an integer, got {v!r}")
                return default
        elif kind is bool:
            if not isinstance(v, bool):
                self.err(full, f"expected true or false, got {v!r}")
                return default
        elif kind is str:
            if not isinstance(v, (str, int)) or isinstance(v, bool):
                self.err(full, f"expected a string, got {v!r}")
                return default
            v = str(v)
        elif kind is list:
            if not isinstance(v, list):
                self.err(full, f"expected a list, got {type(v).__name__}")
                return default
        elif kind is dict:
            if not isinstance(v, dict):
                self.err(full, f"expected a mapping, got {type(v).__name__}")
                return default
        if lo is not None and (v < lo or (lo_open and v == lo)):
            self.err(full, f"must be {'>' if lo_open else '>='} {lo}, got {v}")
            return default
        if hi is not None and v > hi:
            self.err(full, f"must be <= {hi}, got {v}")
            return default
        return v

    def unknown(self, d: dict, allowed: Sequence[str], path: str) -> None:
        for k in d:
            if k not in allowed:
                self.err(f"{path}.{k}" if path else str(k), "unknown field")


# ---------------------------------------------------------------------------

NODE_FIELDS = ("name", "type", "memory_qubits", "t_mem", "single_active_interface", "switch_time",
               "switch_loss_db", "processing_delay")
LINK_FIELDS = ("id", "endpoints", "length_km", "attenuation_db_per_km", "attempt_rate",
               "detector_efficiency", "base_fidelity", "qubit_capacity", "architecture", "midpoint",
               "switch", "switch_loss_db")
CHANNEL_FIELDS = ("endpoints", "distance_m", "velocity")
NETWORK_FIELDS = ("name", "parent", "members", "borders", "advertised_fidelity", "advertised_cost")
CONN_FIELDS = ("id", "initiator", "responder", "min_fidelity", "start", "mode", "count", "qubits",
               "weight", "stop")
POLICY_FIELDS = ("discard_factor", "min_discard", "timer_margin", "meas_basis", "e2e_fallback")


def load_config(topology: Optional[str] = None, scenario: Optional[str] = None) -> ScenarioConfig:
    """Load and validate; raises :class:`ConfigError` listing every problem."""
    paths = [p for p in (topology, scenario) if p]
    if not paths:
        raise ConfigError(["no configuration file given"])
    errors: List[str] = []
    merged: Dict[str, Any] = {}
    lines: Dict[str, Tuple[str, int]] = {}
    seen_in: Dict[str, str] = {}
    for p in dict.fromkeys(paths):
        data, ln = _load_yaml(p, errors)
        if data is None:
            continue
        for k, v in data.items():
            if k in merged:
                errors.append(f"{p}:{ln.get(str(k), 0)}: {k}: also defined in {seen_in[k]}")
                continue
            merged[k] = v
            seen_in[k] = p
        for k, line in ln.items():
            lines.setdefault(k, (p, line))
    if errors:
        raise ConfigError(errors)
    return parse_config(merged, lines, tuple(dict.fromkeys(paths)))


def parse_config(data: dict, lines: Optional[Dict[str, Tuple[str, int]]] = None,
                 sources: Tuple[str, ...] = ()) -> ScenarioConfig:
    ck = _Checker(lines or {})
    ck.unknown(data, TOPOLOGY_KEYS + SCENARIO_KEYS, "")

    # nodes
    nodes: Dict[str, NodeCapability] = {}
    proc: Dict[str, int] = {}
    for i, n in enumerate(ck.get(data, "nodes", "", list, [], required=True)):
        path = f"nodes[{i}]"
        if not isinstance(n, dict):
            ck.err(path, "expected a mapping")
            continue
        ck.unknown(n, NODE_FIELDS, path)
        name = ck.get(n, "name", path, str, required=True)
        ntype = ck.get(n, "type", path, str, "COMP")
        if ntype not in NODE_TYPES:
            ck.err(f"{path}.type", f"unknown node type {ntype!r} (one of {', '.join(NODE_TYPES)})")
            ntype = None
        default_mem = 0 if ntype == "MEAS" else 16
        mem = ck.get(n, "memory_qubits", path, int, default_mem, lo=0)
        t_mem = ck.get(n, "t_mem", path, float, math.inf, lo=0, lo_open=True)
        single = ck.get(n, "single_active_interface", path, bool, False)
        sw = ck.get(n, "switch_time", path, float, 0.0, lo=0)
        swl = ck.get(n, "switch_loss_db", path, float, 0.0, lo=0)
        pd = ck.get(n, "processing_delay", path, float, 0.0, lo=0)
        if name is None or ntype is None:
            continue
        if name in nodes:
            ck.err(f"{path}.name", f"duplicate node name {name!r}")
            continue
        if ntype == "MEAS" and mem:
            ck.err(f"{path}.memory_qubits", "MEAS nodes have no memory qubits")
            mem = 0
        try:
            nodes[name] = NodeCapability(ntype, mem, t_mem, single, swl, sw)
        except ValueError as exc:
            ck.err(path, str(exc))
        if pd:
            proc[name] = ticks(pd)

    # links
    links: List[LinkSpec] = []
    link_ids: Dict[str, int] = {}
    for i, l in enumerate(ck.get(data, "links", "", list, [])):
        path = f"links[{i}]"
        if not isinstance(l, dict):
            ck.err(path, "expected a mapping")
            continue
        ck.unknown(l, LINK_FIELDS, path)
        lid = ck.get(l, "id", path, str, required=True)
        ends = ck.get(l, "endpoints", path, list, None, required=True)
        ok = lid is not None
        if ends is not None:
            if len(ends) != 2:
                ck.err(f"{path}.endpoints", f"expected two node names, got {len(ends)}")
                ok = False
            else:
                for j, e in enumerate(ends):
                    if str(e) not in nodes:
                        ck.err(f"{path}.endpoints[{j}]", f"link {lid!r} references undefined node {e!r}")
                        ok = False
                if len(ends) == 2 and str(ends[0]) == str(ends[1]):
                    ck.err(f"{path}.endpoints", "a link needs two distinct endpoints")
                    ok = False
        else:
            ok = False
        length = ck.get(l, "length_km", path, float, None, required=True, lo=0, lo_open=True)
        att = ck.get(l, "attenuation_db_per_km", path, float, 0.2, lo=0)
        rate = ck.get(l, "attempt_rate", path, float, 1.0e4, lo=0, lo_open=True)
        eff = ck.get(l, "detector_efficiency", path, float, 1.0, lo=0, hi=1, lo_open=True)
        fid = ck.get(l, "base_fidelity", path, float, 0.95, lo=0.25, hi=1.0)
        cap = ck.get(l, "qubit_capacity", path, int, 4, lo=1)
        arch = ck.get(l, "architecture", path, str, "direct")
        if arch not in ARCHITECTURES:
            ck.err(f"{path}.architecture", f"unknown architecture {arch!r} (one of {', '.join(ARCHITECTURES)})")
            ok = False
        mid = ck.get(l, "midpoint", path, str, None)
        if arch != "direct":
            if mid is None:
                ck.err(f"{path}.midpoint", f"{arch} link needs a midpoint node")
                ok = False
            elif mid not in nodes:
                ck.err(f"{path}.midpoint", f"undefined node {mid!r}")
                ok = False
            elif nodes[mid].node_type != ("BSA" if arch == "bsa" else "EPPS"):
                ck.err(f"{path}.midpoint", f"{arch} link midpoint must be a "
                                           f"{'BSA' if arch == 'bsa' else 'EPPS'} node")
                ok = False
        sw = ck.get(l, "switch", path, str, None)
        swl = ck.get(l, "switch_loss_db", path, float, None, lo=0)
        if sw is not None:
            if sw not in nodes:
                ck.err(f"{path}.switch", f"undefined node {sw!r}")
                ok = False
            elif nodes[sw].node_type != "OSW":
                ck.err(f"{path}.switch", "switch must be an OSW node")
                ok = False
            elif swl is None:
                swl = nodes[sw].switch_loss_db
        if lid is not None:
            if lid in link_ids:
                ck.err(f"{path}.id", f"duplicate link id {lid!r} (also links[{link_ids[lid]}])")
                ok = False
            else:
                link_ids[lid] = i
        if ends is not None and ok:
            for e in ends:
                t = nodes[str(e)].node_type
                if t in ("BSA", "EPPS", "OSW"):
                    ck.err(f"{path}.endpoints", f"{e!r} is a {t} node and cannot terminate a link")
                    ok = False
        if ok and None not in (length, att, rate, eff, fid, cap):
            try:
                links.append(LinkSpec(lid, (str(ends[0]), str(ends[1])), length, att, rate, eff, fid,
                                      cap, arch, mid, sw, swl or 0.0))
            except ValueError as exc:
                ck.err(path, str(exc))

    # classical channel overrides
    channels: List[ClassicalChannel] = []
    for i, c in enumerate(ck.get(data, "channels", "", list, [])):
        path = f"channels[{i}]"
        if not isinstance(c, dict):
            ck.err(path, "expected a mapping")
            continue
        ck.unknown(c, CHANNEL_FIELDS, path)
        ends = ck.get(c, "endpoints", path, list, None, required=True)
        dist = ck.get(c, "distance_m", path, float, None, required=True, lo=0, lo_open=True)
        vel = ck.get(c, "velocity", path, float, FIBER_VELOCITY, lo=0, lo_open=True)
        if ends is None or len(ends) != 2:
            if ends is not None:
                ck.err(f"{path}.endpoints", "expected two node names")
            continue
        bad = [j for j, e in enumerate(ends) if str(e) not in nodes]
        for j in bad:
            ck.err(f"{path}.endpoints[{j}]", f"undefined node {ends[j]!r}")
        if not bad and dist is not None and vel is not None:
            channels.append(ClassicalChannel((str(ends[0]), str(ends[1])), dist, vel))

    # network groupings
    groups: List[NetworkGroup] = []
    names = set()
    raw_groups = ck.get(data, "networks", "", list, [])
    declared = {str(g.get("name")) for g in raw_groups if isinstance(g, dict) and g.get("name") is not None}
    for i, g in enumerate(raw_groups):
        path = f"networks[{i}]"
        if not isinstance(g, dict):
            ck.err(path, "expected a mapping")
            continue
        ck.unknown(g, NETWORK_FIELDS, path)
        name = ck.get(g, "name", path, str, required=True)
        parent = ck.get(g, "parent", path, str, ROOT)
        members = [str(m) for m in ck.get(g, "members", path, list, [])]
        borders = [str(b) for b in ck.get(g, "borders", path, list, [])]
        adv_f = ck.get(g, "advertised_fidelity", path, float, None, lo=0.25, hi=1.0)
        adv_c = ck.get(g, "advertised_cost", path, float, None, lo=0, lo_open=True)
        if name is None:
            continue
        if name in names or name == ROOT:
            ck.err(f"{path}.name", f"duplicate or reserved network name {name!r}")
            continue
        names.add(name)
        if parent != ROOT and parent not in declared:
            ck.err(f"{path}.parent", f"undefined network {parent!r}")
            continue
        for j, m in enumerate(members):
            if m not in nodes:
                ck.err(f"{path}.members[{j}]", f"undefined node {m!r}")
        for j, b in enumerate(borders):
            if b not in nodes:
                ck.err(f"{path}.borders[{j}]", f"undefined node {b!r}")
        if not borders:
            ck.err(f"{path}.borders", "a network needs at least one border")
        groups.append(NetworkGroup(name, parent, [m for m in members if m in nodes],
                                   [b for b in borders if b in nodes], adv_f, adv_c))

    topo = None
    if not ck.errors:
        try:
            topo = Topology(nodes, links, groups)
            for e in topo.validate():
                ck.err(e.split(":", 1)[0], e.split(": ", 1)[1])
        except ValueError as exc:
            ck.err("networks", str(exc))

    # scenario
    seed = ck.get(data, "seed", "", int, 0, lo=0)
    duration = ck.get(data, "duration", "", float, 1.0, lo=0, lo_open=True)
    disc = ck.get(data, "discipline", "", str, "statmux")
    if disc not in DISCIPLINES:
        ck.err("discipline", f"unknown discipline {disc!r} (one of {', '.join(DISCIPLINES)})")
    tdm = ck.get(data, "tdm_slice", "", float, 1e-3, lo=0, lo_open=True)
    loop = ck.get(data, "loopback", "", float, DEFAULT_LOOPBACK / 1e12, lo=0, lo_open=True)
    stale = ck.get(data, "staleness_factor", "", float, 10.0, lo=0, lo_open=True)
    hold = ck.get(data, "app_hold", "", float, 0.0, lo=0)
    verify = ck.get(data, "verify", "", bool, True)
    vbound = ck.get(data, "verify_bound", "", int, DEFAULT_BOUND, lo=1)
    pol = ck.get(data, "policy", "", dict, {})
    ck.unknown(pol, POLICY_FIELDS, "policy")
    basis = ck.get(pol, "meas_basis", "policy", str, "Z")
    if basis not in BASES:
        ck.err("policy.meas_basis", f"unknown basis {basis!r}")
        basis = "Z"
    policy = GeneratorPolicy(
        ck.get(pol, "discard_factor", "policy", float, 10.0, lo=0, lo_open=True) or 10.0,
        ticks(ck.get(pol, "min_discard", "policy", float, 1e-3, lo=0) or 0.0),
        ticks(ck.get(pol, "timer_margin", "policy", float, 1e-5, lo=0) or 0.0),
        basis,
        ck.get(pol, "e2e_fallback", "policy", bool, True))

    conns: List[ConnectionSpec] = []
    ids: Dict[str, int] = {}
    for i, c in enumerate(ck.get(data, "connections", "", list, [])):
        path = f"connections[{i}]"
        if not isinstance(c, dict):
            ck.err(path, "expected a mapping")
            continue
        ck.unknown(c, CONN_FIELDS, path)
        cid = ck.get(c, "id", path, str, required=True)
        ini = ck.get(c, "initiator", path, str, required=True)
        rsp = ck.get(c, "responder", path, str, required=True)
        fmin = ck.get(c, "min_fidelity", path, float, None, required=True, lo=0.25, hi=1.0)
        start = ck.get(c, "start", path, float, 0.0, lo=0)
        mode = ck.get(c, "mode", path, str, "stream")
        count = ck.get(c, "count", path, int, 0, lo=0)
        qubits = ck.get(c, "qubits", path, int, 2, lo=1)
        weight = ck.get(c, "weight", path, float, 1.0, lo=0, lo_open=True)
        stop = ck.get(c, "stop", path, float, None, lo=0)
        ok = None not in (cid, ini, rsp, fmin)
        if cid is not None:
            if cid in ids:
                ck.err(f"{path}.id", f"duplicate connection id {cid!r}: connections[{ids[cid]}] "
                                     f"and connections[{i}]")
                ok = False
            else:
                ids[cid] = i
        for key, n in (("initiator", ini), ("responder", rsp)):
            if n is not None and n not in nodes:
                ck.err(f"{path}.{key}", f"undefined node {n!r}")
                ok = False
            elif n is not None and nodes[n].node_type in ("BSA", "EPPS", "OSW"):
                ck.err(f"{path}.{key}", f"{n!r} is a passive {nodes[n].node_type} node")
                ok = False
        if ini is not None and ini == rsp:
            ck.err(f"{path}.responder", "initiator and responder must differ")
            ok = False
        if mode not in ("stream", "count"):
            ck.err(f"{path}.mode", f"unknown mode {mode!r} (stream or count)")
            ok = False
        elif mode == "count" and not count:
            ck.err(f"{path}.count", "count mode needs a positive count")
            ok = False
        if stop is not None and start is not None and stop < start:
            ck.err(f"{path}.stop", "stop precedes start")
        if ok:
            conns.append(ConnectionSpec(cid, ini, rsp, fmin, start, mode, count, qubits, weight, stop))

    if ck.errors:
        raise ConfigError(ck.errors)
    return ScenarioConfig(topo, conns, channels, proc, disc, seed, duration, ticks(tdm), ticks(loop),
                          stale, ticks(hold), verify, vbound, policy, sources)


def build_network(cfg: ScenarioConfig, seed: Optional[int] = None, trace=None):
    from .network import Network
    net = Network(cfg.topology, seed=cfg.seed if seed is None else seed, discipline=cfg.discipline,
                  channels=cfg.channels, loopback=cfg.loopback, processing_delay=cfg.processing_delay,
                  trace=trace, staleness_factor=cfg.staleness_factor, app_hold=cfg.app_hold,
                  tdm_slice=cfg.tdm_slice, verify=cfg.verify, verify_bound=cfg.verify_bound,
                  policy=cfg.policy)
    for c in cfg.connections:
        net.connect(c.connection_id, c.initiator, c.responder, c.min_fidelity, at=c.start,
                    mode=c.mode, count=c.count, qubits=c.qubits, weight=c.weight)
        if c.stop is not None:
            net.teardown_at(c.connection_id, c.stop)
    return net
