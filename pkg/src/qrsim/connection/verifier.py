"""Static hazard check for a connection's RuleSets.

Bounded explicit-state exploration of the distributed state machine formed by
the RuleSets on a path.  Continuous time is handled with difference-bound
matrices: every pending timer and in-flight message owns a clock and fires
exactly at its deadline, while base pairs may appear at any instant.  Each
message takes either zero delay or the full one-way latency, FIFO per
channel.

Abstractions: every link produces at most one base pair; fidelity thresholds
always hold, and purification always succeeds.  The hazards of interest are
ordering hazards and these do not depend on fidelity values.

Physical entanglement is tracked separately from what each node believes,
so a swap or delivery on a half whose believed partner differs from its
physical partner is reported as Leapfrog.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, Iterator, List, Optional, Sequence, Tuple

from ..ruleset.model import (DELIVER_STAGE, WILDCARD, Cmp, Free, Meas, Promote, QCirc, Res, Rule,
                             RuleSet, Send, SetTimer, SetVar, Stage, Timer)

FINDING_KINDS = ("Leapfrog", "DiscardRace", "Nontermination", "UnpairedMessage", "ResourceLeak")
INF = 1 << 62
DEFAULT_BOUND = 100_000  # covers paths of up to six nodes


@dataclass(frozen=True)
class Finding:
    kind: str
    location: str
    explanation: str

    def __str__(self) -> str:
        return f"{self.kind} at {self.location}: {self.explanation}"


@dataclass
class VerifierReport:
    findings: List[Finding] = field(default_factory=list)
    states: int = 0
    inconclusive: bool = False

    @property
    def ok(self) -> bool:
        return not self.findings and not self.inconclusive

    def kinds(self) -> set:
        return {f.kind for f in self.findings}

    def to_text(self) -> str:
        status = "inconclusive" if self.inconclusive else ("pass" if not self.findings else "fail")
        lines = [f"status: {status}", f"states: {self.states}", f"findings: {len(self.findings)}"]
        for f in self.findings:
            lines.append(f"  - kind: {f.kind}")
            lines.append(f"    location: {f.location}")
            lines.append(f"    explanation: {f.explanation}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# difference-bound matrices (non-strict bounds; index 0 is the zero clock)

Zone = Tuple[Tuple[int, ...], ...]


def _canon(m: List[List[int]]) -> Optional[List[List[int]]]:
    n = len(m)
    for k in range(n):
        mk = m[k]
        for i in range(n):
            mik = m[i][k]
            if mik >= INF:
                continue
            mi = m[i]
            for j in range(n):
                kj = mk[j]
                if kj < INF and mik + kj < mi[j]:
                    mi[j] = mik + kj
    for i in range(n):
        if m[i][i] < 0:
            return None
    return m


def _constrain(m: List[List[int]], i: int, j: int, c: int) -> Optional[List[List[int]]]:
    """Add x_i - x_j <= c to a canonical zone, keeping it canonical."""
    if c >= m[i][j]:
        return m
    if c + m[j][i] < 0:
        return None
    n = len(m)
    mj = m[j]
    for a in range(n):
        ai = m[a][i]
        if ai >= INF:
            continue
        via = ai + c
        ma = m[a]
        for b in range(n):
            jb = mj[b]
            if jb < INF and via + jb < ma[b]:
                ma[b] = via + jb
    return m


def _up(m: List[List[int]], deadlines: Sequence[int]) -> Optional[List[List[int]]]:
    # let time pass (canonical form survives dropping upper bounds), then
    # intersect with each clock's deadline
    for i in range(1, len(m)):
        m[i][0] = INF
    for i in range(1, len(m)):
        if deadlines[i - 1] < INF and _constrain(m, i, 0, deadlines[i - 1]) is None:
            return None
    return m


def _add_clock(m: List[List[int]]) -> List[List[int]]:
    n = len(m)
    for i in range(n):
        m[i].append(m[i][0])
    m.append(list(m[0]))  # row 0 already carries the new column (0)
    return m


def _drop_clock(m: List[List[int]], k: int) -> List[List[int]]:
    del m[k]
    for row in m:
        del row[k]
    return m


def _freeze(m: List[List[int]]) -> Zone:
    return tuple(tuple(r) for r in m)


def _thaw(z: Zone) -> List[List[int]]:
    return [list(r) for r in z]


def _subset(a: Zone, b: Zone) -> bool:
    return all(x <= y for ra, rb in zip(a, b) for x, y in zip(ra, rb))


# ---------------------------------------------------------------------------
# discrete state

@dataclass(frozen=True)
class MRes:
    name: tuple
    partner: str
    stage: int
    pending: bool = False


@dataclass(frozen=True)
class MNode:
    res: Tuple[MRes, ...] = ()
    tomb: FrozenSet[Tuple[tuple, str]] = frozenset()
    tokens: Tuple[Tuple[int, str, tuple], ...] = ()  # (stage, timer id, resource name)
    purif: Tuple[Tuple[tuple, tuple], ...] = ()      # (kept, sacrificed) awaiting partner result
    early: Tuple[Tuple[tuple, tuple], ...] = ()
    deferred: Tuple[Tuple[str, tuple], ...] = ()     # (src, message)

    def find(self, name) -> Optional[MRes]:
        for r in self.res:
            if r.name == name:
                return r
        return None

    def tomb_of(self, name) -> Optional[str]:
        for n, c in self.tomb:
            if n == name:
                return c
        return None


@dataclass(frozen=True)
class MState:
    nodes: Tuple[MNode, ...]
    events: Tuple[Tuple, ...]        # ("timer", node, name, timer_id, d) | ("msg", src, dst, msg, d)
    phys: FrozenSet[Tuple[Tuple[str, tuple], Optional[Tuple[str, tuple]]]]
    created: FrozenSet[int]


class _Ctx:
    """Mutable working copy of a discrete state during one transition."""

    def __init__(self, v: "_Verifier", st: MState, zone: List[List[int]]):
        self.v = v
        self.nodes = list(st.nodes)
        self.events = list(st.events)
        self.phys = dict(st.phys)
        self.created = set(st.created)
        self.zone = zone
        self.outbox: List[Tuple[str, str, tuple]] = []

    def clone(self) -> "_Ctx":
        c = _Ctx.__new__(_Ctx)
        c.v = self.v
        c.nodes = list(self.nodes)
        c.events = list(self.events)
        c.phys = dict(self.phys)
        c.created = set(self.created)
        c.zone = [list(r) for r in self.zone]
        c.outbox = list(self.outbox)
        return c

    # events / clocks
    def schedule(self, ev: tuple) -> None:
        self.events.append(ev)
        _add_clock(self.zone)

    def unschedule(self, pred) -> None:
        for k in range(len(self.events) - 1, -1, -1):
            if pred(self.events[k]):
                del self.events[k]
                _drop_clock(self.zone, k + 1)

    def freeze(self) -> Optional[Tuple[MState, Zone]]:
        z = _up(self.zone, [e[-1] for e in self.events])
        if z is None:
            return None
        st = MState(tuple(self.nodes), tuple(self.events), frozenset(self.phys.items()),
                    frozenset(self.created))
        return st, _freeze(z)


class _Verifier:
    def __init__(self, rulesets: Dict[str, RuleSet], path: Sequence[str], latencies: Sequence[int],
                 bound: int):
        self.rs = rulesets
        self.path = list(path)
        self.idx = {n: i for i, n in enumerate(self.path)}
        self.lat = list(latencies)
        self.bound = bound
        self.findings: Dict[Tuple[str, str], Finding] = {}
        self.ends = (self.path[0], self.path[-1])

    def latency(self, a: str, b: str) -> int:
        i, j = sorted((self.idx[a], self.idx[b]))
        return max(1, sum(self.lat[i:j]))

    def flag(self, kind: str, location: str, explanation: str) -> None:
        self.findings.setdefault((kind, location), Finding(kind, location, explanation))

    # ------------------------------------------------------------ exploration

    def run(self) -> VerifierReport:
        init = _Ctx(self, MState(tuple(MNode() for _ in self.path), (), frozenset(), frozenset()),
                    [[0]])
        start = init.freeze()
        seen: Dict[MState, List[Zone]] = {}
        stack = [start]
        count = 0
        inconclusive = False
        while stack:
            st, zone = stack.pop()
            zones = seen.setdefault(st, [])
            if any(_subset(zone, z) for z in zones):
                continue
            zones[:] = [z for z in zones if not _subset(z, zone)]
            zones.append(zone)
            count += 1
            if count > self.bound:
                inconclusive = True
                break
            succ = list(self.successors(st, zone))
            if not succ and not st.events:
                self.check_quiescent(st)
            stack.extend(succ)
        return VerifierReport(sorted(self.findings.values(), key=lambda f: (f.kind, f.location)),
                              count, inconclusive)

    def check_quiescent(self, st: MState) -> None:
        for n, ns in zip(self.path, st.nodes):
            for r in ns.res:
                self.flag("Nontermination", n,
                          f"resource shared with {r.partner} stays in stage {r.stage} "
                          f"with no rule or timer left to end it")

    def successors(self, st: MState, zone: Zone) -> Iterator[Tuple[MState, Zone]]:
        # fire a pending event at its deadline
        for k, ev in enumerate(st.events):
            if ev[0] == "msg" and not self._channel_head(st, k):
                continue
            m = _thaw(zone)
            if _constrain(m, 0, k + 1, -ev[-1]) is None:
                continue
            ctx = _Ctx(self, st, m)
            del ctx.events[k]
            _drop_clock(ctx.zone, k + 1)
            if ev[0] == "timer":
                self.on_timer(ctx, ev[1], ev[2], ev[3])
            else:
                self.on_message(ctx, ev[1], ev[2], ev[3])
            yield from self.flush(ctx)
        # a base pair appears on a link not yet used
        for h in range(len(self.path) - 1):
            if h in st.created:
                continue
            ctx = _Ctx(self, st, _thaw(zone))
            ctx.created.add(h)
            a, b = self.path[h], self.path[h + 1]
            name = ("l", h)
            ctx.phys[(a, name)] = (b, name)
            ctx.phys[(b, name)] = (a, name)
            for n, p in ((a, b), (b, a)):
                self.add_resource(ctx, n, MRes(name, p, 0))
            for n in (a, b):
                self.evaluate(ctx, n)
            yield from self.flush(ctx)

    def _channel_head(self, st: MState, k: int) -> bool:
        _, src, dst, _, _ = st.events[k]
        for e in st.events[:k]:
            if e[0] == "msg" and e[1] == src and e[2] == dst:
                return False
        return True

    def flush(self, ctx: _Ctx) -> Iterator[Tuple[MState, Zone]]:
        """Resolve queued sends: each goes out with zero or full latency."""
        if not ctx.outbox:
            fr = ctx.freeze()
            if fr is not None:
                yield fr
            return
        src, dst, msg = ctx.outbox.pop(0)
        busy = any(e[0] == "msg" and e[1] == src and e[2] == dst for e in ctx.events)
        if not busy:
            now = ctx.clone()
            self.on_message(now, src, dst, msg)
            yield from self.flush(now)
        ctx.schedule(("msg", src, dst, msg, self.latency(src, dst)))
        yield from self.flush(ctx)

    # ------------------------------------------------------------ node model

    def node(self, ctx: _Ctx, n: str) -> MNode:
        return ctx.nodes[self.idx[n]]

    def put(self, ctx: _Ctx, n: str, ns: MNode) -> None:
        ctx.nodes[self.idx[n]] = ns

    def add_resource(self, ctx: _Ctx, n: str, r: MRes) -> None:
        ns = self.node(ctx, n)
        self.put(ctx, n, replace(ns, res=tuple(sorted(ns.res + (r,), key=lambda x: repr(x.name)))))

    def set_resource(self, ctx: _Ctx, n: str, old: MRes, new: Optional[MRes]) -> None:
        ns = self.node(ctx, n)
        res = [x for x in ns.res if x.name != old.name]
        if new is not None:
            res.append(new)
        self.put(ctx, n, replace(ns, res=tuple(sorted(res, key=lambda x: repr(x.name)))))

    def terminate(self, ctx: _Ctx, n: str, r: MRes, category: str) -> None:
        ns = self.node(ctx, n)
        self.set_resource(ctx, n, r, None)
        ns = self.node(ctx, n)
        self.put(ctx, n, replace(ns, tomb=ns.tomb | {(r.name, category)},
                                 tokens=tuple(t for t in ns.tokens if t[2] != r.name)))
        self.cancel_timers(ctx, n, r.name)
        half = (n, r.name)
        other = ctx.phys.pop(half, None)
        if other is not None and category != "swapped":
            ctx.phys[other] = None

    def cancel_timers(self, ctx: _Ctx, n: str, name) -> None:
        ctx.unschedule(lambda e: e[0] == "timer" and e[1] == n and e[2] == name)

    def check_partner(self, ctx: _Ctx, n: str, r: MRes, what: str) -> None:
        other = ctx.phys.get((n, r.name))
        if other is not None and other[0] != r.partner:
            self.flag("Leapfrog", n, f"{what} on a pair believed shared with {r.partner} "
                                     f"but physically shared with {other[0]}")

    def evaluate(self, ctx: _Ctx, n: str) -> None:
        rs = self.rs.get(n)
        if rs is None:
            return
        guard = 0
        progressed = True
        while progressed:
            progressed = False
            for stage in rs.stages:
                if self.fire_first(ctx, n, stage):
                    progressed = True
                    guard += 1
                    if guard > 1000:
                        self.flag("Nontermination", n, "rule evaluation does not converge")
                        return
                    break

    def fire_first(self, ctx: _Ctx, n: str, stage: Stage) -> bool:
        ns = self.node(ctx, n)
        pool = [r for r in ns.res if r.stage == stage.stage_id]
        toks = [t for t in ns.tokens if t[0] == stage.stage_id]
        if not pool and not toks:
            return False
        for rule in stage.rules:
            m = self.match(rule, pool, toks, stage)
            if m is not None:
                refs, used = m
                ns = self.node(ctx, n)
                tokens = list(ns.tokens)
                for t in used:
                    tokens.remove(t)
                self.put(ctx, n, replace(ns, tokens=tuple(tokens)))
                self.execute(ctx, n, rule, refs)
                return True
        return False

    def match(self, rule: Rule, pool, toks, stage: Stage):
        refs, used, taken = [], [], set()
        for c in rule.conditions:
            if isinstance(c, Cmp):
                if not c.holds(dict(stage.variables).get(c.variable, 0)):
                    return None  # variables are not modelled beyond their initial values
            elif isinstance(c, Res):
                got = [r for r in pool if not r.pending and r.name not in taken
                       and (c.partner == WILDCARD or r.partner == c.partner)][:c.count]
                if len(got) < c.count:
                    return None
                taken.update(r.name for r in got)
                refs.extend(got)
            elif isinstance(c, Timer):
                tok = next((t for t in toks if t[1] == c.timer_id and t not in used
                            and t[2] not in taken
                            and not any(r.name == t[2] and r.pending for r in pool)), None)
                if tok is None:
                    return None
                used.append(tok)
                taken.add(tok[2])
                refs.append(next((r for r in pool if r.name == tok[2]), None))
        return refs, used

    def execute(self, ctx: _Ctx, n: str, rule: Rule, refs: List[Optional[MRes]]) -> None:
        refs = list(refs)
        circuit: Dict[int, str] = {}
        swap = None
        purify = None

        def live(i):
            r = refs[i]
            return r is not None and self.node(ctx, n).find(r.name) == r

        for a in rule.actions:
            if isinstance(a, QCirc):
                i, j = a.refs
                if not (live(i) and live(j)):
                    continue
                if a.circuit == "PURIFY_PAIR":
                    if repr(refs[j].name) < repr(refs[i].name):
                        refs[i], refs[j] = refs[j], refs[i]
                    kept = replace(refs[i], pending=True)
                    self.set_resource(ctx, n, refs[i], kept)
                    refs[i] = kept
                    purify = (kept.name, refs[j].name, kept.partner)
                    ns = self.node(ctx, n)
                    self.put(ctx, n, replace(ns, purif=ns.purif + ((kept.name, refs[j].name),)))
                    circuit[j] = "purified"
                else:
                    r0, r1 = refs[i], refs[j]
                    self.check_partner(ctx, n, r0, "swap")
                    self.check_partner(ctx, n, r1, "swap")
                    new = ("s", n, r0.name, r1.name)
                    swap = (new, r0, r1)
                    p0, p1 = ctx.phys.get((n, r0.name)), ctx.phys.get((n, r1.name))
                    if p0 is not None:
                        ctx.phys[p0] = p1
                    if p1 is not None:
                        ctx.phys[p1] = p0
                    circuit[i] = circuit[j] = "swapped"
            elif isinstance(a, Meas):
                for i in a.refs:
                    if not live(i):
                        continue
                    if i in circuit:
                        self.terminate(ctx, n, refs[i], circuit[i])
                    else:
                        self.deliver(ctx, n, refs[i])
            elif isinstance(a, Promote):
                for i in a.refs:
                    if not live(i) or i in circuit:
                        continue
                    self.cancel_timers(ctx, n, refs[i].name)
                    if a.target_stage == DELIVER_STAGE:
                        self.deliver(ctx, n, refs[i])
                    else:
                        moved = replace(refs[i], stage=a.target_stage)
                        ns = self.node(ctx, n)
                        self.set_resource(ctx, n, refs[i], moved)
                        ns = self.node(ctx, n)
                        self.put(ctx, n, replace(ns, tokens=tuple(
                            t for t in ns.tokens if t[2] != moved.name)))
                        refs[i] = moved
            elif isinstance(a, Free):
                for i in a.refs:
                    if live(i):
                        self.terminate(ctx, n, refs[i], "freed")
            elif isinstance(a, SetTimer):
                for i in range(len(refs)):
                    if live(i):
                        ctx.schedule(("timer", n, refs[i].name, a.timer_id, a.duration))
            elif isinstance(a, Send):
                self.send(ctx, n, a, refs, swap, purify)
            elif isinstance(a, SetVar):
                pass
        for i, cat in circuit.items():
            if live(i):
                self.terminate(ctx, n, refs[i], cat)
        if purify is not None:
            key = (purify[0], purify[1])
            ns = self.node(ctx, n)
            if key in ns.early:
                self.put(ctx, n, replace(ns, early=tuple(e for e in ns.early if e != key)))
                self.resolve(ctx, n, key)

    def deliver(self, ctx: _Ctx, n: str, r: MRes) -> None:
        self.check_partner(ctx, n, r, "delivery")
        far = self.ends[1] if n == self.ends[0] else self.ends[0]
        if n not in self.ends or r.partner != far:
            self.flag("Leapfrog", n, f"delivers a pair shared with {r.partner}, "
                                     f"not the far end {far}")
        self.terminate(ctx, n, r, "delivered")

    def send(self, ctx: _Ctx, n: str, a: Send, refs, swap, purify) -> None:
        r = refs[a.ref] if a.ref < len(refs) else None
        if a.kind == "TRANSFER":
            if swap is None or r is None:
                return
            new, r0, r1 = swap
            mine, other = (r0, r1) if r.name == r0.name else (r1, r0)
            ctx.outbox.append((n, a.dest or mine.partner, ("TRANSFER", mine.name, other.partner, new)))
        elif a.kind == "MEAS_RESULT":
            if purify is None:
                return
            kept, sac, partner = purify
            ctx.outbox.append((n, a.dest or partner, ("MEAS_RESULT", kept, sac)))
        elif r is not None:
            ctx.outbox.append((n, a.dest or r.partner, (a.kind, r.name)))

    def resolve(self, ctx: _Ctx, n: str, key) -> None:
        ns = self.node(ctx, n)
        self.put(ctx, n, replace(ns, purif=tuple(p for p in ns.purif if p != key)))
        r = self.node(ctx, n).find(key[0])
        if r is not None:
            self.set_resource(ctx, n, r, replace(r, pending=False))
            self.evaluate(ctx, n)

    # --------------------------------------------------------------- inputs

    def on_timer(self, ctx: _Ctx, n: str, name, timer_id: str) -> None:
        ns = self.node(ctx, n)
        r = ns.find(name)
        if r is None:
            return
        self.put(ctx, n, replace(ns, tokens=ns.tokens + ((r.stage, timer_id, name),)))
        self.evaluate(ctx, n)

    def on_message(self, ctx: _Ctx, src: str, n: str, msg: tuple) -> None:
        if n not in self.rs:
            return
        ns = self.node(ctx, n)
        kind = msg[0]
        if kind == "TRANSFER":
            _, old, new_partner, new = msg
            cat = ns.tomb_of(old)
            if cat is not None:
                if cat == "freed":
                    self.flag("DiscardRace", n, f"{src}'s swap result arrives after {n} "
                                                f"discarded the pair it shared with {src}")
                    ctx.outbox.append((n, new_partner, ("FREE", new)))
                return
            r = ns.find(old)
            if r is None:
                self.defer(ctx, n, src, msg, old)
                return
            renamed = replace(r, name=new, partner=new_partner)
            self.set_resource(ctx, n, r, renamed)
            ns = self.node(ctx, n)
            self.put(ctx, n, replace(ns, tomb=ns.tomb | {(old, "renamed")}, tokens=tuple(
                (t[0], t[1], new if t[2] == old else t[2]) for t in ns.tokens)))
            ctx.events = [("timer", e[1], new, e[3], e[4]) if e[0] == "timer" and e[1] == n
                          and e[2] == old else e for e in ctx.events]
            p = ctx.phys.pop((n, old), None)
            ctx.phys[(n, new)] = p
            if p is not None:
                ctx.phys[p] = (n, new)
            self.replay(ctx, n, new)
            self.evaluate(ctx, n)
        elif kind == "MEAS_RESULT":
            _, kept, sac = msg
            key = (kept, sac)
            if key in ns.purif:
                self.resolve(ctx, n, key)
            elif ns.tomb_of(kept) == "freed":
                self.flag("DiscardRace", n, f"purification result from {src} arrives after "
                                            f"{n} discarded the kept pair")
            elif ns.find(kept) is not None and ns.find(sac) is not None:
                self.put(ctx, n, replace(ns, early=ns.early + (key,)))
            elif ns.find(kept) is None and ns.tomb_of(kept) is None:
                self.defer(ctx, n, src, msg, kept)
        elif kind == "FREE":
            name = msg[1]
            if ns.tomb_of(name) is not None:
                return
            r = ns.find(name)
            if r is None:
                self.defer(ctx, n, src, msg, name)
                return
            self.terminate(ctx, n, r, "freed")
            ns = self.node(ctx, n)
            self.put(ctx, n, replace(ns, purif=tuple(p for p in ns.purif if p[0] != name)))
            self.evaluate(ctx, n)

    def defer(self, ctx: _Ctx, n: str, src: str, msg: tuple, name) -> None:
        ns = self.node(ctx, n)
        self.put(ctx, n, replace(ns, deferred=ns.deferred + ((src, msg),)))

    def replay(self, ctx: _Ctx, n: str, name) -> None:
        ns = self.node(ctx, n)
        waiting = [d for d in ns.deferred if name in d[1][1:]]
        if not waiting:
            return
        self.put(ctx, n, replace(ns, deferred=tuple(d for d in ns.deferred if d not in waiting)))
        for src, msg in waiting:
            self.on_message(ctx, src, n, msg)


# ---------------------------------------------------------------------------
# static checks

def _ref_partners(rule: Rule) -> List[Optional[str]]:
    out: List[Optional[str]] = []
    for c in rule.conditions:
        if isinstance(c, Res):
            out.extend([None if c.partner == WILDCARD else c.partner] * c.count)
        elif isinstance(c, Timer):
            out.append(None)
    return out


def unpaired_messages(rulesets: Dict[str, RuleSet]) -> List[Finding]:
    """Messages a rule can emit toward a node with nothing to receive them."""
    out = []
    for node, rs in sorted(rulesets.items()):
        for stage in rs.stages:
            for rule in stage.rules:
                partners = _ref_partners(rule)
                for a in rule.actions:
                    if not isinstance(a, Send):
                        continue
                    dest = a.dest or (partners[a.ref] if a.ref < len(partners) else None)
                    if dest is None:
                        continue
                    loc = f"{node} stage {stage.stage_id} rule {rule.rule_id}"
                    peer = rulesets.get(dest)
                    if peer is None:
                        out.append(Finding("UnpairedMessage", loc,
                                           f"{a.kind} to {dest}, which has no RuleSet"))
                        continue
                    if a.kind == "MEAS_RESULT" and not _has_purify_with(peer, node):
                        out.append(Finding("UnpairedMessage", loc,
                                           f"MEAS_RESULT to {dest}, which never purifies "
                                           f"pairs shared with {node}"))
    return out


def _has_purify_with(rs: RuleSet, partner: str) -> bool:
    for stage in rs.stages:
        for rule in stage.rules:
            if any(isinstance(a, QCirc) and a.circuit == "PURIFY_PAIR" for a in rule.actions):
                if any(isinstance(c, Res) and c.partner in (partner, WILDCARD)
                       for c in rule.conditions):
                    return True
    return False


def verify_rulesets(rulesets: Dict[str, RuleSet], path: Sequence[str], latencies: Sequence[int],
                    bound: int = DEFAULT_BOUND) -> VerifierReport:
    """Check the RuleSets for one connection along ``path``.

    ``latencies[i]`` is the one-way classical latency (ps) of hop i.
    """
    if len(latencies) != len(path) - 1:
        raise ValueError(f"{len(latencies)} latencies for {len(path) - 1} hops")
    static = unpaired_messages(rulesets)
    v = _Verifier(rulesets, path, latencies, bound)
    rep = v.run()
    rep.findings = static + rep.findings
    return rep


def verification_key(rulesets: Dict[str, RuleSet], path: Sequence[str],
                     latencies: Sequence[int]) -> str:
    """Identity of a verification problem up to node and connection names."""
    label = {n: f"#{i}" for i, n in enumerate(path)}
    parts = []
    for n in path:
        rs = rulesets.get(n)
        if rs is None:
            parts.append("-")
            continue
        for st in rs.stages:
            for r in st.rules:
                conds = tuple(replace(c, partner=label.get(c.partner, c.partner))
                              if isinstance(c, Res) else c for c in r.conditions)
                acts = tuple(replace(a, dest=label.get(a.dest, a.dest))
                             if isinstance(a, Send) else a for a in r.actions)
                parts.append(repr((label[n], st.stage_id, st.variables, r.rule_id, conds, acts)))
    parts.append(repr(tuple(latencies)))
    return "\n".join(parts)


# ---------------------------------------------------------------------------
# mutations used to exercise the checker

def with_discard_timer(rulesets: Dict[str, RuleSet], node: str, duration: int) -> Dict[str, RuleSet]:
    """Copy of ``rulesets`` with every timer armed at ``node`` set to ``duration``."""
    rs = rulesets[node]
    stages = tuple(replace(s, rules=tuple(replace(r, actions=tuple(
        replace(a, duration=duration) if isinstance(a, SetTimer) else a for a in r.actions))
        for r in s.rules)) for s in rs.stages)
    out = dict(rulesets)
    out[node] = replace(rs, stages=stages)
    return out


def with_greedy_swaps(rulesets: Dict[str, RuleSet], path: Sequence[str]) -> Dict[str, RuleSet]:
    """Copy where every interior node swaps its two link-level neighbours as
    soon as it holds both, ignoring the swap tree."""
    out = dict(rulesets)
    for i in range(1, len(path) - 1):
        rs = rulesets[path[i]]
        stages = []
        for s in rs.stages:
            rules = []
            for r in s.rules:
                if any(isinstance(a, QCirc) and a.circuit in ("SWAP", "BSM") for a in r.actions):
                    conds = tuple(replace(c, partner=p) for c, p in
                                  zip([c for c in r.conditions if isinstance(c, Res)],
                                      (path[i - 1], path[i + 1])))
                    r = replace(r, conditions=conds)
                rules.append(r)
            stages.append(replace(s, rules=tuple(rules)))
        out[path[i]] = replace(rs, stages=tuple(stages))
    return out
