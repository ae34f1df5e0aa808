"""Responder-side RuleSet generation.

Policy: link-level entanglement pumping up to per-link targets chosen so the
swap composition meets the requested fidelity, then swapping along a
balanced binary tree.  Discard timers grow with tree level so a holder never
frees a pair that a lower-level swapper may still transfer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

from ..kernel import MS, US, ticks
from ..routing import pumping_fixed_point, pumping_schedule
from ..ruleset.model import (DELIVER_STAGE, Free, Meas, Promote, QCirc, Res, Rule, RuleSet, Send,
                             SetTimer, Stage, Timer)
from ..state import F_MIN, fidelity_from_werner, purify_outcome, werner_from_fidelity
from .request import ConnectionRequest, InfeasibleFidelity, LinkInfo

EPS = 1e-9
DISCARD = "discard"
PUMP_STAGE, WAIT_STAGE, FINAL_STAGE, FALLBACK_STAGE = 0, 1, 2, 3


@dataclass(frozen=True)
class GeneratorPolicy:
    discard_factor: float = 10.0  # discard window in units of the slowest pumped link period
    min_discard: int = 1 * MS
    timer_margin: int = 10 * US
    meas_basis: str = "Z"
    e2e_fallback: bool = True


@dataclass(frozen=True)
class LinkPlan:
    base: float
    target: float
    rounds: int
    achieved: float
    raw_pairs: float
    seconds_per_pair: float  # pumped


# ---------------------------------------------------------------------------
# per-link targets

def _logw(F: float) -> float:
    w = werner_from_fidelity(F)
    return math.log(w) if w > 0 else -math.inf


def link_targets(bases: Sequence[float], F_min: float,
                 pumpable: Optional[Sequence[bool]] = None) -> List[float]:
    """Per-link fidelity targets whose swap composition reaches ``F_min``.

    The log-Werner budget is split evenly over links that need help; a link
    whose base fidelity already covers its share keeps its base and frees
    the surplus for the others.  Links that cannot be pumped (measure-on-
    arrival ends) keep their base, as do links whose pumping saturates below
    their share, in which case the rest must make up the difference.
    """
    n = len(bases)
    if pumpable is None:
        pumpable = [True] * n
    budget = _logw(F_min)
    if math.isinf(budget):
        return [b for b in bases]
    lo = [_logw(b) for b in bases]
    hi = [_logw(pumping_fixed_point(b) - 1e-7) if p else _logw(b) for b, p in zip(bases, pumpable)]
    hi = [max(h, l) for h, l in zip(hi, lo)]
    if sum(lo) >= budget:
        return [float(b) for b in bases]
    if sum(hi) < budget - 1e-15:
        raise InfeasibleFidelity(
            f"links cannot reach {F_min:.6f} (best composition short by "
            f"{budget - sum(hi):.3g} in log-Werner)")

    # water-filling: each link gets clamp(share, lo, hi); the total is
    # monotone in share, so bisect for the share that meets the budget
    def total(share: float) -> float:
        return sum(min(h, max(l, share)) for l, h in zip(lo, hi))

    a, b = min(lo), 0.0
    for _ in range(200):
        m = (a + b) / 2
        if total(m) >= budget:
            b = m
        else:
            a = m
    targets = []
    for base, l, h in zip(bases, lo, hi):
        if b <= l:
            targets.append(base)
        else:
            targets.append(min(1.0, fidelity_from_werner(math.exp(min(h, b))) + 1e-12))
    return [float(t) for t in targets]


def plan_links(infos: Sequence[LinkInfo], F_min: float, pumpable: Sequence[bool]) -> List[LinkPlan]:
    bases = [li.base_fidelity for li in infos]
    targets = link_targets(bases, F_min, pumpable)
    plans = []
    for li, t, can in zip(infos, targets, pumpable):
        if t <= li.base_fidelity + 1e-15 or not can:
            plans.append(LinkPlan(li.base_fidelity, li.base_fidelity, 0, li.base_fidelity, 1.0,
                                  li.seconds_per_pair))
            continue
        steps, ok = pumping_schedule(li.base_fidelity, t)
        if not ok:
            raise InfeasibleFidelity(
                f"hop {li.endpoints[0]}-{li.endpoints[1]}: pumping from {li.base_fidelity:.6f} "
                f"saturates below {t:.6f}")
        last = steps[-1]
        plans.append(LinkPlan(li.base_fidelity, t, last.round, last.fidelity, last.raw_pairs,
                              li.seconds_per_pair * last.raw_pairs))
    composed = werner_from_fidelity(plans[0].achieved)
    for p in plans[1:]:
        composed *= werner_from_fidelity(p.achieved)
    if fidelity_from_werner(composed) + 1e-12 < F_min:
        raise InfeasibleFidelity(f"composed fidelity {fidelity_from_werner(composed):.6f} "
                                 f"< {F_min:.6f}")
    return plans


def predicted_fidelity(plans: Sequence[LinkPlan]) -> float:
    w = 1.0
    for p in plans:
        w *= werner_from_fidelity(p.achieved)
    return fidelity_from_werner(w)


# ---------------------------------------------------------------------------
# swap tree

def swap_tree(n_nodes: int) -> Dict[int, Tuple[int, int, int]]:
    """Map swapper index -> (left partner, right partner, level).

    Balanced tree over path indices; for an even split the midpoint rounds
    toward the initiator.  Level 1 swaps first.
    """
    out: Dict[int, Tuple[int, int, int]] = {}

    def build(l: int, r: int) -> int:
        if r - l <= 1:
            return 0
        m = (l + r) // 2
        lvl = 1 + max(build(l, m), build(m, r))
        out[m] = (l, r, lvl)
        return lvl

    build(0, n_nodes - 1)
    return out


def discard_timers(height: int, window: int, e2e_latency: int, margin: int) -> List[int]:
    """Timer per level 1..height+1 (index 0 unused)."""
    D = [0, window]
    for lvl in range(2, height + 2):
        D.append(sum(D[1:lvl]) + e2e_latency + margin)
    return D


# ---------------------------------------------------------------------------
# RuleSet assembly

def _pump_rules(partner: str, plan: LinkPlan, timer: int, start_id: int) -> List[Rule]:
    promote = Rule(start_id, (Res(partner, max(F_MIN, plan.target - EPS), 1),),
                   (Promote((0,), WAIT_STAGE), SetTimer(DISCARD, timer)), f"promote-{partner}")
    if plan.rounds == 0:
        return [promote]
    _, F1 = purify_outcome(plan.base, plan.base)
    purify_actions = (QCirc((0, 1), "PURIFY_PAIR"), Meas((1,), "Z"), Send("MEAS_RESULT", 0))
    pump = Rule(start_id + 1, (Res(partner, F1 - EPS, 1), Res(partner, F_MIN, 1)),
                purify_actions, f"pump-{partner}")
    seed = Rule(start_id + 2, (Res(partner, F_MIN, 2),), purify_actions, f"seed-{partner}")
    return [promote, pump, seed]


def _discard_rule(rule_id: int) -> Rule:
    return Rule(rule_id, (Timer(DISCARD),), (Free((0,)), Send("FREE", 0)), "discard")


def generate_rulesets(req: ConnectionRequest,
                      policy: GeneratorPolicy = GeneratorPolicy()) -> Dict[str, RuleSet]:
    path = list(req.route)
    n = len(path)
    if n < 2:
        raise InfeasibleFidelity("path has fewer than two nodes")
    infos = list(req.accumulated)
    if len(infos) != n - 1:
        raise ValueError(f"request carries {len(infos)} LinkInfo for {n - 1} hops")
    types = list(req.node_types) if req.node_types else ["COMP"] * n
    F_min = req.requirements.min_fidelity
    pumpable = [types[i] != "MEAS" and types[i + 1] != "MEAS" for i in range(n - 1)]
    plans = plan_links(infos, F_min, pumpable)

    tree = swap_tree(n)
    height = max((lvl for _, _, lvl in tree.values()), default=0)
    slowest = max(p.seconds_per_pair for p in plans)
    window = max(policy.min_discard, ticks(policy.discard_factor * slowest))
    e2e_latency = sum(li.latency for li in infos)
    D = discard_timers(height, window, e2e_latency, policy.timer_margin)

    both_comp = types[0] == "COMP" and types[-1] == "COMP"
    out: Dict[str, RuleSet] = {}
    for i, node in enumerate(path):
        is_end = i in (0, n - 1)
        level = height + 1 if is_end else tree[i][2]
        timer = D[level]
        pump_rules: List[Rule] = []
        if i > 0:
            pump_rules += _pump_rules(path[i - 1], plans[i - 1], timer, len(pump_rules))
        if i < n - 1:
            pump_rules += _pump_rules(path[i + 1], plans[i], timer, len(pump_rules))
        stages = [Stage(PUMP_STAGE, tuple(pump_rules))]
        if not is_end:
            l, r, _ = tree[i]
            swap = Rule(0, (Res(path[l], F_MIN, 1), Res(path[r], F_MIN, 1)),
                        (QCirc((0, 1), "SWAP"), Send("TRANSFER", 0),
                         Send("TRANSFER", 1, with_correction=True)), f"swap-{path[l]}-{path[r]}")
            stages.append(Stage(WAIT_STAGE, (swap, _discard_rule(1))))
        else:
            far = path[-1] if i == 0 else path[0]
            ready = Rule(0, (Res(far, F_MIN, 1),), (Promote((0,), FINAL_STAGE),), "e2e-ready")
            stages.append(Stage(WAIT_STAGE, (ready, _discard_rule(1))))
            gate = Res(far, max(F_MIN, F_min - EPS), 1)
            if types[i] == "MEAS":
                deliver = Rule(0, (gate,), (Meas((0,), policy.meas_basis),), "deliver")
            else:
                deliver = Rule(0, (gate,), (Promote((0,), DELIVER_STAGE),), "deliver")
            final_rules = [deliver]
            if both_comp and policy.e2e_fallback:
                final_rules.append(Rule(1, (Res(far, F_MIN, 2),),
                                        (QCirc((0, 1), "PURIFY_PAIR"), Meas((1,), "Z"),
                                         Promote((0,), FALLBACK_STAGE), Send("MEAS_RESULT", 0)),
                                        "e2e-purify"))
                stages.append(Stage(FINAL_STAGE, tuple(final_rules)))
                stages.append(Stage(FALLBACK_STAGE, (
                    Rule(0, (gate,), deliver.actions, "deliver"),
                    Rule(1, (Res(far, F_MIN, 1),), (Free((0,)),), "drop"))))
            else:
                final_rules.append(Rule(1, (Res(far, F_MIN, 1),), (Free((0,)),), "drop"))
                stages.append(Stage(FINAL_STAGE, tuple(final_rules)))
        out[node] = RuleSet(f"{req.connection_id}@{node}", req.connection_id, node,
                            tuple(stages), req.layer)
    return out


def describe_plan(req: ConnectionRequest) -> Dict[str, object]:
    """Summary of the generator's numbers for a request (for reports and tests)."""
    n = len(req.route)
    types = list(req.node_types) if req.node_types else ["COMP"] * n
    pumpable = [types[i] != "MEAS" and types[i + 1] != "MEAS" for i in range(n - 1)]
    plans = plan_links(req.accumulated, req.requirements.min_fidelity, pumpable)
    return {
        "targets": [p.target for p in plans],
        "rounds": [p.rounds for p in plans],
        "achieved": [p.achieved for p in plans],
        "predicted_fidelity": predicted_fidelity(plans),
        "seconds_per_pair": [p.seconds_per_pair for p in plans],
        "swap_tree": swap_tree(n),
    }
