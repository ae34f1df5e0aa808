"""RuleSet, Stage, Rule and the clause vocabulary.

Matched resources are addressed by position ("refs"): RES clauses contribute
``count`` refs each, in clause order, and a TIMER clause contributes the one
resource its expired timer is bound to.  Within a RES clause the oldest
qualifying resources come first.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple, Union

WILDCARD = "*"
DELIVER_STAGE = 0xFFFF  # promotion target meaning "hand to the application"

CMP_OPS = ("EQ", "LT", "GT", "LE", "GE")
BASES = ("Z", "X", "RANDOM")
CIRCUITS = ("PURIFY_PAIR", "SWAP", "BSM")
MESSAGE_KINDS = ("FREE", "UPDATE", "MEAS_RESULT", "TRANSFER")
PAULIS = ("I", "X", "Z", "XZ")


@dataclass(frozen=True)
class Cmp:
    variable: str
    op: str
    value: float

    def holds(self, x: float) -> bool:
        op = self.op
        if op == "EQ":
            return x == self.value
        if op == "LT":
            return x < self.value
        if op == "GT":
            return x > self.value
        if op == "LE":
            return x <= self.value
        return x >= self.value


@dataclass(frozen=True)
class Timer:
    timer_id: str


@dataclass(frozen=True)
class Res:
    partner: str
    min_fidelity: float
    count: int = 1


ConditionClause = Union[Cmp, Timer, Res]


@dataclass(frozen=True)
class SetTimer:
    """Arm ``timer_id`` on every resource the rule matched and still holds."""

    timer_id: str
    duration: int  # picoseconds


@dataclass(frozen=True)
class Promote:
    refs: Tuple[int, ...]
    target_stage: int


@dataclass(frozen=True)
class Free:
    refs: Tuple[int, ...]


@dataclass(frozen=True)
class SetVar:
    variable: str
    value: float
    relative: bool = True  # add ``value`` rather than assign it


@dataclass(frozen=True)
class Meas:
    refs: Tuple[int, ...]
    basis: str = "Z"


@dataclass(frozen=True)
class QCirc:
    """Apply ``circuit`` to the refs.

    After PURIFY_PAIR, ref 0 denotes the kept pair and ref 1 the sacrificed
    one (the kept pair is the one with the smaller external name).
    """

    refs: Tuple[int, ...]
    circuit: str


@dataclass(frozen=True)
class Send:
    """Emit a protocol message to the partner of ``ref`` (or to ``dest``)."""

    kind: str
    ref: int = 0
    dest: str = ""
    with_correction: bool = False


ActionClause = Union[SetTimer, Promote, Free, SetVar, Meas, QCirc, Send]


@dataclass(frozen=True)
class Rule:
    rule_id: int
    conditions: Tuple[ConditionClause, ...]
    actions: Tuple[ActionClause, ...]
    name: str = ""

    @property
    def ref_count(self) -> int:
        n = 0
        for c in self.conditions:
            if isinstance(c, Res):
                n += c.count
            elif isinstance(c, Timer):
                n += 1
        return n


@dataclass(frozen=True)
class Stage:
    stage_id: int
    rules: Tuple[Rule, ...] = ()
    variables: Tuple[Tuple[str, float], ...] = ()

    def initial_variables(self) -> Dict[str, float]:
        return dict(self.variables)


@dataclass(frozen=True)
class RuleSet:
    ruleset_id: str
    connection_id: str
    owner_node: str
    stages: Tuple[Stage, ...] = ()
    layer: int = 0

    def stage(self, stage_id: int) -> Optional[Stage]:
        if 0 <= stage_id < len(self.stages):
            return self.stages[stage_id]
        return None


# ---------------------------------------------------------------------------
# protocol messages

@dataclass(frozen=True)
class ProtocolMessage:
    connection_id: str
    sender: str
    names: Tuple  # ExternalName values the message refers to
    kind: str = field(init=False, default="")


@dataclass(frozen=True)
class FreeMsg(ProtocolMessage):
    kind: str = field(init=False, default="FREE")


@dataclass(frozen=True)
class UpdateMsg(ProtocolMessage):
    pauli_correction: str = "I"
    kind: str = field(init=False, default="UPDATE")


@dataclass(frozen=True)
class MeasResultMsg(ProtocolMessage):
    parity: int = 0
    round: int = 0
    kind: str = field(init=False, default="MEAS_RESULT")


@dataclass(frozen=True)
class TransferMsg(ProtocolMessage):
    new_partner: str = ""
    new_name: object = None
    pauli_correction: str = "I"
    est_fidelity: float = 1.0
    kind: str = field(init=False, default="TRANSFER")
