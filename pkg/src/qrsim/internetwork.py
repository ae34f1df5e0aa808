"""Recursive networks: groupings with borders, per-layer routing graphs, and
virtual links that stand in for a sub-network's interior.

A grouping is a network that appears to its parent as a set of border
nodes joined by virtual links.  Routing at a layer sees only the nodes that
layer can name: its own members, the borders of its child networks, and the
endpoints of the connection being routed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

from .connection.generator import plan_links, predicted_fidelity
from .connection.request import InfeasibleFidelity, LinkInfo
from .link import LinkSpec, NodeCapability
from .routing import RoutingGraph, Route, cost_from_raw, link_cost, qdijkstra, raw_seconds_per_pair

ROOT = ""


@dataclass(frozen=True)
class LayeredAddress:
    components: Tuple[str, ...]  # network names from the naming layer down, then the node
    layer: int

    def __str__(self) -> str:
        return "/".join(self.components) + f"@{self.layer}"


@dataclass
class NetworkGroup:
    name: str
    parent: str = ROOT
    members: List[str] = field(default_factory=list)  # nodes directly in this network
    borders: List[str] = field(default_factory=list)
    advertised_fidelity: Optional[float] = None
    advertised_cost: Optional[float] = None  # seconds per pair; overrides the computed value


@dataclass(frozen=True)
class VirtualLink:
    network: str
    endpoints: Tuple[str, str]
    seconds_per_pair: float
    fidelity: float
    internal_path: Tuple[str, ...]
    internal_hops: Tuple[Tuple[str, str], ...]
    internal_cost: float

    def cost(self, F_index: float):
        return cost_from_raw(self.seconds_per_pair, self.fidelity, F_index)


@dataclass(frozen=True)
class LayerRoute:
    network: str
    layer: int
    path: Tuple[str, ...]
    hops: Tuple[Tuple[str, str], ...]
    cost: float


class Topology:
    """Static description of nodes, links and network groupings."""

    def __init__(self, nodes: Dict[str, NodeCapability], links: Sequence[LinkSpec],
                 groups: Iterable[NetworkGroup] = ()):
        self.nodes = dict(nodes)
        self.links: Dict[str, LinkSpec] = {l.link_id: l for l in links}
        self.groups: Dict[str, NetworkGroup] = {ROOT: NetworkGroup(ROOT, parent=None)}
        for g in groups:
            if g.name == ROOT or g.name in self.groups:
                raise ValueError(f"duplicate network name {g.name!r}")
            self.groups[g.name] = g
        self._node_group: Dict[str, str] = {}
        for g in self.groups.values():
            for n in g.members:
                if n in self._node_group:
                    raise ValueError(f"node {n} belongs to networks {self._node_group[n]!r} and {g.name!r}")
                self._node_group[n] = g.name
        for n in self.nodes:
            self._node_group.setdefault(n, ROOT)
            if n not in self.groups[ROOT].members and self._node_group[n] == ROOT:
                self.groups[ROOT].members.append(n)
        self._children: Dict[str, List[str]] = {name: [] for name in self.groups}
        for g in self.groups.values():
            if g.name != ROOT:
                if g.parent not in self.groups:
                    raise ValueError(f"network {g.name!r} has unknown parent {g.parent!r}")
                self._children[g.parent].append(g.name)
        for name in self.groups:
            self._depth(name)  # rejects cycles
        self._adj: Dict[str, List[LinkSpec]] = {n: [] for n in self.nodes}
        for l in self.links.values():
            for e in l.endpoints:
                self._adj[e].append(l)
        self._vl_cache: Dict[Tuple[str, str, str], Optional[VirtualLink]] = {}
        self._max_depth = max(self._depth(g) for g in self.groups)

    # ---------------------------------------------------------- structure

    def _depth(self, name: str) -> int:
        d, seen = 0, set()
        while name != ROOT:
            if name in seen:
                raise ValueError(f"network nesting cycle through {name!r}")
            seen.add(name)
            name = self.groups[name].parent
            d += 1
        return d

    def layer_of(self, group: str) -> int:
        return self._max_depth - self._depth(group)

    def group_of(self, node: str) -> str:
        return self._node_group[node]

    def chain(self, node_or_group: str, is_group: bool = False) -> List[str]:
        """Groups from innermost to root."""
        g = node_or_group if is_group else self.group_of(node_or_group)
        out = [g]
        while g != ROOT:
            g = self.groups[g].parent
            out.append(g)
        return out

    def within(self, node: str, group: str) -> bool:
        return group in self.chain(node)

    def child_containing(self, group: str, node: str) -> Optional[str]:
        """The child of ``group`` whose subtree holds ``node`` (None if direct member)."""
        ch = self.chain(node)
        if group not in ch:
            raise ValueError(f"{node} is not inside network {group!r}")
        i = ch.index(group)
        return ch[i - 1] if i > 0 else None

    def common_group(self, a: str, b: str) -> str:
        cb = set(self.chain(b))
        for g in self.chain(a):
            if g in cb:
                return g
        return ROOT

    def interior(self, group: str) -> List[str]:
        """Every node inside ``group``'s subtree that is not one of its borders."""
        borders = set(self.groups[group].borders)
        return sorted(n for n in self.nodes if self.within(n, group) and n not in borders)

    def address(self, node: str, group: str = ROOT) -> LayeredAddress:
        ch = self.chain(node)
        i = ch.index(group)
        comps = tuple(reversed([g for g in ch[:i]])) + (node,)
        return LayeredAddress(comps, self.layer_of(group))

    # -------------------------------------------------------------- views

    def visible(self, group: str, endpoints: Iterable[str] = ()) -> List[str]:
        vis = set(n for n in self.groups[group].members)
        for c in self._children[group]:
            vis.update(self.groups[c].borders)
        for e in endpoints:
            if self.within(e, group):
                vis.add(e)
        return sorted(vis)

    def _visible_in_child(self, group: str, child: str, vis: Sequence[str]) -> List[str]:
        return [n for n in vis if self.within(n, child)]

    def graph(self, group: str, endpoints: Iterable[str] = ()) -> Tuple[RoutingGraph, Dict[str, Tuple[str, str]]]:
        """Routing graph for ``group`` and a map edge key -> hop descriptor."""
        endpoints = tuple(endpoints)
        vis = self.visible(group, endpoints)
        vset = set(vis)
        g = RoutingGraph()
        hop_of: Dict[str, Tuple[str, str]] = {}
        for n in vis:
            g.add_node(n)
        for l in sorted(self.links.values(), key=lambda l: l.link_id):
            a, b = l.endpoints
            if a not in vset or b not in vset:
                continue
            ca, cb = self.child_containing(group, a), self.child_containing(group, b)
            if ca is not None and ca == cb:
                continue  # interior to a child; reachable only through its virtual links
            g.add_link(l)
            hop_of[l.link_id] = ("link", l.link_id)
        for c in sorted(self._children[group]):
            inside = self._visible_in_child(group, c, vis)
            for i, a in enumerate(inside):
                for b in inside[i + 1:]:
                    vl = self.virtual_link(c, a, b)
                    if vl is None:
                        continue
                    key = f"virtual:{c}:{a}:{b}"
                    g.add_edge(a, b, key, vl.cost)
                    hop_of[key] = ("virtual", c)
        return g, hop_of

    def virtual_link(self, network: str, a: str, b: str) -> Optional[VirtualLink]:
        a, b = sorted((a, b))
        key = (network, a, b)
        if key not in self._vl_cache:
            self._vl_cache[key] = None  # guards recursion
            self._vl_cache[key] = self._compute_virtual_link(network, a, b)
        return self._vl_cache[key]

    def hop_fidelity_cost(self, network: str, hop: Tuple[str, str], u: str, v: str) -> Tuple[float, float]:
        kind, ref = hop
        if kind == "link":
            l = self.links[ref]
            return l.base_fidelity, raw_seconds_per_pair(l)
        vl = self.virtual_link(ref, u, v)
        return vl.fidelity, vl.seconds_per_pair

    def _compute_virtual_link(self, network: str, a: str, b: str) -> Optional[VirtualLink]:
        grp = self.groups[network]
        g, hop_of = self.graph(network, (a, b))
        target = grp.advertised_fidelity
        route = None
        if target is not None:
            route = qdijkstra(g, a, b, target)
        if route is None:
            route = qdijkstra(g, a, b, 0.25)
        if route is None:
            return None
        hops = tuple(hop_of[k] for k in route.edge_keys)
        infos = []
        for (u, v), hop in zip(zip(route.path, route.path[1:]), hops):
            F, spp = self.hop_fidelity_cost(network, hop, u, v)
            infos.append(LinkInfo((u, v), spp, F, 0, 0, hop[0] == "virtual"))
        if target is None:
            w = 1.0
            for li in infos:
                w *= (4 * li.base_fidelity - 1) / 3
            fidelity = (1 + 3 * w) / 4
            cost = sum(li.seconds_per_pair for li in infos)
        else:
            types = [self.nodes[n].node_type for n in route.path]
            pumpable = [types[i] != "MEAS" and types[i + 1] != "MEAS" for i in range(len(infos))]
            try:
                plans = plan_links(infos, target, pumpable)
            except InfeasibleFidelity:
                return None
            fidelity = target
            cost = sum(p.seconds_per_pair for p in plans)
        internal = cost
        if grp.advertised_cost is not None:
            cost = max(cost, grp.advertised_cost)
        return VirtualLink(network, (a, b), cost, fidelity, route.path, hops, internal)

    # ------------------------------------------------------------ routing

    def route(self, src: str, dst: str, F_index: float) -> Optional[LayerRoute]:
        group = self.common_group(src, dst)
        g, hop_of = self.graph(group, (src, dst))
        r = qdijkstra(g, src, dst, F_index)
        if r is None:
            return None
        return LayerRoute(group, self.layer_of(group), r.path,
                          tuple(hop_of[k] for k in r.edge_keys), r.cost)

    def child_route(self, network: str, a: str, b: str) -> Optional[LayerRoute]:
        """The interior route a virtual link advertises, oriented a -> b."""
        vl = self.virtual_link(network, a, b)
        if vl is None:
            return None
        path, hops = vl.internal_path, vl.internal_hops
        if path[0] != a:
            path, hops = tuple(reversed(path)), tuple(reversed(hops))
        return LayerRoute(network, self.layer_of(network), path, hops, vl.internal_cost)

    def flat_graph(self) -> RoutingGraph:
        g = RoutingGraph()
        for n in self.nodes:
            g.add_node(n)
        for l in sorted(self.links.values(), key=lambda l: l.link_id):
            g.add_link(l)
        return g

    def validate(self) -> List[str]:
        errors = []
        for g in self.groups.values():
            if g.name == ROOT:
                continue
            for b in g.borders:
                if b not in self.nodes:
                    errors.append(f"networks.{g.name}.borders: unknown node {b!r}")
                elif not self.within(b, g.name):
                    errors.append(f"networks.{g.name}.borders: {b!r} is not inside the network")
        for l in self.links.values():
            a, b = l.endpoints
            if a not in self.nodes or b not in self.nodes:
                continue
            ga, gb = self.group_of(a), self.group_of(b)
            if ga == gb:
                continue
            # a link leaving a network must start at one of its borders
            for n, other in ((a, b), (b, a)):
                for grp in self.chain(n):
                    if grp == ROOT or self.within(other, grp):
                        break
                    if n not in self.groups[grp].borders:
                        errors.append(f"links.{l.link_id}: {n!r} leaves network {grp!r} "
                                      f"but is not one of its borders")
                        break
        return errors
