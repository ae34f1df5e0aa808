"""Human-readable RuleSet dump: stable field names, one clause per line."""

from __future__ import annotations

from .model import (DELIVER_STAGE, Cmp, Free, Meas, Promote, QCirc, Res, RuleSet, Send, SetTimer,
                    SetVar, Timer)


def _refs(refs) -> str:
    return ",".join(str(r) for r in refs)


def format_clause(c) -> str:
    if isinstance(c, Cmp):
        return f"CMP variable={c.variable} op={c.op} value={c.value!r}"
    if isinstance(c, Timer):
        return f"TIMER timer={c.timer_id}"
    if isinstance(c, Res):
        return f"RES partner={c.partner} min_fidelity={c.min_fidelity:.6f} count={c.count}"
    if isinstance(c, SetTimer):
        return f"SETTIMER timer={c.timer_id} duration_ps={c.duration}"
    if isinstance(c, Promote):
        target = "DELIVER" if c.target_stage == DELIVER_STAGE else str(c.target_stage)
        return f"PROMOTE refs={_refs(c.refs)} stage={target}"
    if isinstance(c, Free):
        return f"FREE refs={_refs(c.refs)}"
    if isinstance(c, SetVar):
        return f"SET variable={c.variable} value={c.value!r} relative={int(c.relative)}"
    if isinstance(c, Meas):
        return f"MEAS refs={_refs(c.refs)} basis={c.basis}"
    if isinstance(c, QCirc):
        return f"QCIRC refs={_refs(c.refs)} circuit={c.circuit}"
    if isinstance(c, Send):
        dest = c.dest or f"partner({c.ref})"
        return f"SEND kind={c.kind} dest={dest} correction={int(c.with_correction)}"
    raise TypeError(c)


def dump_ruleset(rs: RuleSet) -> str:
    lines = [f"ruleset id={rs.ruleset_id} connection={rs.connection_id} "
             f"node={rs.owner_node} layer={rs.layer}"]
    for st in rs.stages:
        lines.append(f"  stage id={st.stage_id}")
        for name, value in st.variables:
            lines.append(f"    var {name}={value!r}")
        for rule in st.rules:
            lines.append(f"    rule id={rule.rule_id} name={rule.name or '-'}")
            for c in rule.conditions:
                lines.append(f"      if {format_clause(c)}")
            for a in rule.actions:
                lines.append(f"      do {format_clause(a)}")
    return "\n".join(lines) + "\n"
