"""qDijkstra routing on seconds-per-Bell-pair costs, plus multiplexing."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

from .link import LinkSpec, attempt_success_probability
from .state import purify_outcome

MAX_PUMP_ROUNDS = 64
_FIXED_POINT_EPS = 1e-13


@dataclass(frozen=True)
class PumpStep:
    round: int
    fidelity: float
    raw_pairs: float  # expected raw pairs consumed per output pair
    p_success: float  # success probability of the round that produced it


def pumping_schedule(F_raw: float, F_index: float, max_rounds: int = MAX_PUMP_ROUNDS
                     ) -> Tuple[List[PumpStep], bool]:
    """Entanglement pumping with one fresh raw pair per round.

    Returns the steps up to the first one reaching ``F_index`` and whether
    the target was reached; the recurrence saturating first means no.
    """
    steps = [PumpStep(0, F_raw, 1.0, 1.0)]
    F, E = F_raw, 1.0
    if F >= F_index:
        return steps, True
    for k in range(1, max_rounds + 1):
        p, F_next = purify_outcome(F, F_raw)
        E = (E + 1.0) / p
        steps.append(PumpStep(k, F_next, E, p))
        if F_next >= F_index:
            return steps, True
        if F_next - F <= _FIXED_POINT_EPS:
            break
        F = F_next
    return steps, False


def pumping_rounds(F_raw: float, F_index: float) -> Optional[int]:
    steps, ok = pumping_schedule(F_raw, F_index)
    return steps[-1].round if ok else None


def pumping_fixed_point(F_raw: float) -> float:
    F = F_raw
    for _ in range(10_000):
        _, nxt = purify_outcome(F, F_raw)
        if nxt - F <= _FIXED_POINT_EPS:
            return max(F, nxt)
        F = nxt
    return F


@dataclass(frozen=True)
class LinkCost:
    seconds_per_pair: float
    F_index: float
    rounds: Optional[int] = 0

    @property
    def finite(self) -> bool:
        return not math.isinf(self.seconds_per_pair)


def raw_seconds_per_pair(link: LinkSpec) -> float:
    p = attempt_success_probability(link)
    return math.inf if p <= 0 else 1.0 / (link.attempt_rate * p)


def cost_from_raw(base_seconds: float, F_raw: float, F_index: float) -> LinkCost:
    steps, ok = pumping_schedule(F_raw, F_index)
    if not ok:
        return LinkCost(math.inf, F_index, None)
    return LinkCost(base_seconds * steps[-1].raw_pairs, F_index, steps[-1].round)


def link_cost(link: LinkSpec, F_index: float) -> LinkCost:
    return cost_from_raw(raw_seconds_per_pair(link), link.base_fidelity, F_index)


# ---------------------------------------------------------------------------
# qDijkstra

@dataclass
class Edge:
    u: str
    v: str
    key: str
    cost: Callable[[float], LinkCost]


@dataclass
class Route:
    path: Tuple[str, ...]
    cost: float
    hops: Tuple[Tuple[str, float], ...]  # (edge key, seconds per pair) per hop

    @property
    def edge_keys(self) -> Tuple[str, ...]:
        return tuple(k for k, _ in self.hops)


class RoutingGraph:
    """Undirected graph whose edges price themselves at an index fidelity."""

    def __init__(self) -> None:
        self.adj: Dict[str, Dict[str, List[Edge]]] = {}

    def add_node(self, n: str) -> None:
        self.adj.setdefault(n, {})

    def add_edge(self, u: str, v: str, key: str, cost: Callable[[float], LinkCost]) -> None:
        e = Edge(u, v, key, cost)
        self.adj.setdefault(u, {}).setdefault(v, []).append(e)
        self.adj.setdefault(v, {}).setdefault(u, []).append(e)

    def add_link(self, link: LinkSpec) -> None:
        a, b = link.endpoints
        self.add_edge(a, b, link.link_id, lambda F, _l=link: link_cost(_l, F))

    def nodes(self) -> List[str]:
        return sorted(self.adj)

    def best_edge(self, u: str, v: str, F_index: float) -> Tuple[Optional[Edge], float]:
        best, best_c = None, math.inf
        for e in sorted(self.adj.get(u, {}).get(v, []), key=lambda e: e.key):
            c = e.cost(F_index).seconds_per_pair
            if c < best_c:
                best, best_c = e, c
        return best, best_c


def qdijkstra(graph: RoutingGraph, src: str, dst: str, F_index: float) -> Optional[Route]:
    """Minimum seconds-per-pair path; ties go to the lexicographically
    smaller node sequence."""
    if src == dst:
        raise ValueError("source and destination coincide")
    if src not in graph.adj or dst not in graph.adj:
        return None
    edge_cache: Dict[Tuple[str, str], Tuple[Optional[Edge], float]] = {}

    def weight(u, v):
        k = (u, v)
        if k not in edge_cache:
            edge_cache[k] = graph.best_edge(u, v, F_index)
        return edge_cache[k]

    settled = set()
    heap: List[Tuple[float, Tuple[str, ...]]] = [(0.0, (src,))]
    while heap:
        cost, path = heapq.heappop(heap)
        u = path[-1]
        if u in settled:
            continue
        settled.add(u)
        if u == dst:
            hops = []
            for a, b in zip(path, path[1:]):
                e, c = weight(a, b)
                hops.append((e.key, c))
            return Route(path, cost, tuple(hops))
        for v in graph.adj[u]:
            if v in settled:
                continue
            _, c = weight(u, v)
            if math.isinf(c):
                continue
            heapq.heappush(heap, (cost + c, path + (v,)))
    return None


# ---------------------------------------------------------------------------
# multiplexing

DISCIPLINES = ("circuit", "statmux", "bufferspace", "tdm")


@dataclass
class MuxState:
    discipline: str = "statmux"
    tdm_slice: int = 10**9  # ps
    reserved: Dict[str, str] = field(default_factory=dict)  # link id -> connection
    quota: Dict[str, Dict[str, int]] = field(default_factory=dict)  # node -> conn -> qubits
    weights: Dict[str, float] = field(default_factory=dict)
    admitted: Dict[str, Tuple[Tuple[str, ...], Tuple[str, ...]]] = field(default_factory=dict)
    starved: Dict[str, int] = field(default_factory=dict)
    unassigned: Dict[str, int] = field(default_factory=dict)


class Multiplexer:
    """Admission and per-arrival assignment for one discipline.

    ``capacity`` maps node -> memory qubit count (used by buffer space).
    """

    def __init__(self, discipline: str = "statmux", capacity: Optional[Dict[str, int]] = None,
                 tdm_slice: int = 10**9):
        if discipline not in DISCIPLINES:
            raise ValueError(f"unknown multiplexing discipline {discipline!r}")
        self.state = MuxState(discipline, tdm_slice)
        self.capacity = capacity or {}

    @property
    def discipline(self) -> str:
        return self.state.discipline

    def admit(self, conn: str, nodes: Sequence[str], links: Sequence[str], qubits: int = 2,
              weight: float = 1.0) -> Tuple[bool, str]:
        st = self.state
        if st.discipline == "circuit":
            for l in links:
                owner = st.reserved.get(l)
                if owner is not None and owner != conn:
                    return False, f"link {l} reserved by {owner}"
            for l in links:
                st.reserved[l] = conn
        elif st.discipline == "bufferspace":
            for n in nodes:
                used = sum(v for c, v in st.quota.get(n, {}).items() if c != conn)
                cap = self.capacity.get(n)
                if cap is not None and used + qubits > cap:
                    return False, f"node {n} has {cap - used} free qubits, {qubits} requested"
            for n in nodes:
                st.quota.setdefault(n, {})[conn] = qubits
        st.weights[conn] = weight
        st.admitted[conn] = (tuple(nodes), tuple(links))
        return True, ""

    def admit_hop(self, conn: str, node: str, link: Optional[str], qubits: int = 2,
                  weight: float = 1.0) -> Tuple[bool, str]:
        """Incremental admission as the outbound pass reaches ``node``."""
        prev_nodes, prev_links = self.state.admitted.get(conn, ((), ()))
        nodes = prev_nodes + (node,)
        links = prev_links + ((link,) if link else ())
        return self.admit(conn, nodes, links, qubits, weight)

    def release(self, conn: str) -> None:
        st = self.state
        for l in [l for l, c in st.reserved.items() if c == conn]:
            del st.reserved[l]
        for n in st.quota.values():
            n.pop(conn, None)
        st.weights.pop(conn, None)
        st.admitted.pop(conn, None)

    def quota_of(self, node: str, conn: str) -> Optional[int]:
        q = self.state.quota.get(node)
        return None if q is None else q.get(conn)

    def assign(self, link: str, active: Sequence[str], now: int, rng,
               eligible: Optional[Callable[[str], bool]] = None) -> Optional[str]:
        """Pick the connection a fresh pair on ``link`` belongs to."""
        st = self.state
        cands = [c for c in active if eligible is None or eligible(c)]
        chosen: Optional[str] = None
        if st.discipline == "circuit":
            owner = st.reserved.get(link)
            chosen = owner if owner in cands else None
        elif st.discipline == "tdm":
            if cands:
                chosen = cands[(now // st.tdm_slice) % len(cands)]
        elif st.discipline == "bufferspace":
            if cands:
                chosen = cands[0] if len(cands) == 1 else self._weighted(cands, rng)
        else:
            if cands:
                chosen = cands[0] if len(cands) == 1 else self._weighted(cands, rng)
        if chosen is None:
            st.unassigned[link] = st.unassigned.get(link, 0) + 1
        for c in active:
            if c != chosen:
                st.starved[c] = st.starved.get(c, 0) + 1
        return chosen

    def _weighted(self, cands: Sequence[str], rng) -> str:
        ws = [self.state.weights.get(c, 1.0) for c in cands]
        total = sum(ws)
        x = rng.random() * total
        acc = 0.0
        for c, w in zip(cands, ws):
            acc += w
            if x < acc:
                return c
        return cands[-1]
