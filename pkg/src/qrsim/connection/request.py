"""Setup-plane records: the outbound request, its per-hop LinkInfo, and the
control messages exchanged during setup and teardown."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Tuple


class SetupError(Exception):
    """Connection setup failed; ``reason`` is reported to the initiator."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class InfeasibleFidelity(SetupError):
    def __init__(self, detail: str):
        super().__init__(f"infeasible fidelity: {detail}")


@dataclass(frozen=True)
class Requirements:
    min_fidelity: float
    mode: str = "stream"  # "stream" or "count"
    count: int = 0

    def __post_init__(self):
        if self.mode not in ("stream", "count"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "count" and self.count <= 0:
            raise ValueError("count mode needs a positive count")


@dataclass(frozen=True)
class LinkInfo:
    endpoints: Tuple[str, str]
    seconds_per_pair: float
    base_fidelity: float
    available_qubits: int
    latency: int  # one-way classical latency, ps
    virtual: bool = False


@dataclass
class ConnectionRequest:
    connection_id: str
    initiator: str
    responder: str
    requirements: Requirements
    route: Tuple[str, ...]
    hops: Tuple[Tuple[str, str], ...]  # per hop: ("link", link id) or ("virtual", network)
    layer: int = 0
    accumulated: List[LinkInfo] = field(default_factory=list)
    node_types: List[str] = field(default_factory=list)
    index: int = 0
    qubits: int = 2
    weight: float = 1.0
    parent: Optional["ConnectionRequest"] = None

    def to_bytes(self) -> bytes:
        """Canonical serialization, used for message-size and privacy checks."""
        return json.dumps(_plain(self), sort_keys=True, separators=(",", ":")).encode()


def _plain(req: ConnectionRequest) -> dict:
    d = {
        "connection_id": req.connection_id,
        "initiator": req.initiator,
        "responder": req.responder,
        "requirements": asdict(req.requirements),
        "route": list(req.route),
        "hops": [list(h) for h in req.hops],
        "layer": req.layer,
        "accumulated": [asdict(li) for li in req.accumulated],
        "node_types": list(req.node_types),
        "index": req.index,
        "qubits": req.qubits,
        "weight": req.weight,
    }
    if req.parent is not None:
        d["parent"] = _plain(req.parent)
    return d


# control-plane messages -----------------------------------------------------

@dataclass
class SetupRequestMsg:
    request: ConnectionRequest


@dataclass
class SetupFailureMsg:
    connection_id: str
    reason: str
    at_node: str


@dataclass
class InstallMsg:
    connection_id: str
    payload: bytes  # encoded RuleSet
    layer: int = 0


@dataclass
class InstallAckMsg:
    connection_id: str
    node: str


@dataclass
class TeardownMsg:
    connection_id: str
    origin: str
