"""Structural checks on a RuleSet (report style, never raises)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

from .model import (DELIVER_STAGE, Cmp, Free, Meas, Promote, QCirc, Res, RuleSet, Send, SetVar,
                    Timer)


@dataclass(frozen=True)
class Violation:
    kind: str
    location: str
    message: str

    def __str__(self) -> str:
        return f"{self.kind} @ {self.location}: {self.message}"


def validate_ruleset(rs: RuleSet) -> List[Violation]:
    out: List[Violation] = []
    for index, stage in enumerate(rs.stages):
        if stage.stage_id != index:
            out.append(Violation("stage numbering", f"{rs.ruleset_id}/stage{index}",
                                 f"stage id {stage.stage_id} at position {index}"))
        declared = {name for name, _ in stage.variables}
        for rule in stage.rules:
            loc = f"{rs.ruleset_id}/stage{stage.stage_id}/rule{rule.rule_id}"
            n_refs = 0
            for c in rule.conditions:
                if isinstance(c, Cmp) and c.variable not in declared:
                    out.append(Violation("undeclared variable", loc, f"CMP on {c.variable!r}"))
                elif isinstance(c, Res):
                    if c.count not in (1, 2):
                        out.append(Violation("bad RES count", loc, f"count {c.count} not in {{1,2}}"))
                    n_refs += c.count
                elif isinstance(c, Timer):
                    n_refs += 1
            terminated = {}
            for a in rule.actions:
                refs = getattr(a, "refs", ())
                for r in refs:
                    if r >= n_refs:
                        out.append(Violation("bad reference", loc,
                                             f"{type(a).__name__} uses ref {r} of {n_refs}"))
                if isinstance(a, Send) and not a.dest and a.ref >= n_refs:
                    out.append(Violation("bad reference", loc, f"SEND to partner of ref {a.ref}"))
                if isinstance(a, SetVar) and a.variable not in declared:
                    out.append(Violation("undeclared variable", loc, f"SET on {a.variable!r}"))
                if isinstance(a, Promote):
                    if a.target_stage != DELIVER_STAGE:
                        if a.target_stage <= stage.stage_id:
                            out.append(Violation("backward promotion", loc,
                                                 f"stage {stage.stage_id} -> {a.target_stage}"))
                        elif a.target_stage >= len(rs.stages):
                            out.append(Violation("unknown stage", loc,
                                                 f"PROMOTE to stage {a.target_stage}"))
                if isinstance(a, (Promote, Free, Meas, QCirc)):
                    kind = type(a).__name__.upper()
                    for r in refs:
                        prev = terminated.get(r)
                        # QCIRC fuses its own measurement; a following MEAS or
                        # PROMOTE on the same ref names what happens to it
                        if prev is not None and prev != "QCIRC":
                            out.append(Violation("double consumption", loc,
                                                 f"ref {r} ends in {prev} and {kind}"))
                        terminated[r] = kind
            missing = [r for r in range(n_refs) if r not in terminated]
            if missing:
                out.append(Violation("resource leak", loc,
                                     f"refs {missing} are never promoted, freed or measured"))
    return out
