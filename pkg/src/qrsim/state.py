"""Werner-state fidelity model and the value types shared by every node.

All entangled pairs are tracked as Werner states, so a single scalar (the
fidelity with respect to the target Bell state) describes each pair.  The
closed forms here are checked against the density-matrix oracle in
:mod:`qrsim.oracle`.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

log = logging.getLogger(__name__)

F_MIN = 0.25
F_MAX = 1.0

PS_PER_SECOND = 10**12


class FidelityDomainError(ValueError):
    pass


def check_fidelity(F: float) -> float:
    if not (F_MIN - 1e-12 <= F <= F_MAX + 1e-12) or math.isnan(F):
        raise FidelityDomainError(f"fidelity {F!r} outside [0.25, 1]")
    return min(max(F, F_MIN), F_MAX)


def clamp_fidelity(F: float) -> float:
    """Clamp into [1/4, 1]; values below the floor are logged, never raised."""
    if F < F_MIN:
        if F < F_MIN - 1e-9:
            log.warning("fidelity %.6g below 1/4 clamped", F)
        return F_MIN
    return min(F, F_MAX)


def werner_from_fidelity(F: float) -> float:
    F = check_fidelity(F)
    return (4.0 * F - 1.0) / 3.0


def fidelity_from_werner(w: float) -> float:
    if not (-1e-12 <= w <= 1.0 + 1e-12):
        raise FidelityDomainError(f"Werner parameter {w!r} outside [0, 1]")
    return (1.0 + 3.0 * w) / 4.0


def swap_fidelity(F1: float, F2: float) -> float:
    """Fidelity after entanglement swapping two Werner pairs."""
    w1 = werner_from_fidelity(F1)
    w2 = werner_from_fidelity(F2)
    return (1.0 + 3.0 * w1 * w2) / 4.0


def purify_outcome(F1: float, F2: float) -> Tuple[float, float]:
    """Success probability and kept-pair fidelity of one parity-check round.

    Bilateral CNOT between the pairs, Z measurement of the target pair,
    keep on even parity, twirl back to Werner form.
    """
    # sorted so the float result is bit-identical under argument exchange
    a, b = sorted((check_fidelity(F1), check_fidelity(F2)))
    ea, eb = 1.0 - a, 1.0 - b
    p = a * b + (a * eb + ea * b) / 3.0 + 5.0 * ea * eb / 9.0
    good = a * b + ea * eb / 9.0
    return p, good / p


def decohere(F0: float, dt: float, T_mem: float) -> float:
    """Depolarize toward 1/4 with time constant ``T_mem`` (seconds)."""
    if dt < 0:
        raise ValueError("negative elapsed time")
    if T_mem <= 0:
        raise ValueError("T_mem must be positive")
    if dt == 0 or math.isinf(T_mem):
        return F0
    return F_MIN + (F0 - F_MIN) * math.exp(-dt / T_mem)


def decohere_rate(F0: float, dt: float, rate: float) -> float:
    """Same as :func:`decohere` with an aggregate rate (sum of 1/T_mem)."""
    if rate == 0.0 or dt == 0:
        return F0
    return F_MIN + (F0 - F_MIN) * math.exp(-dt * rate)


def qber_z(F: float) -> float:
    """Probability that Z-basis outcomes of the two halves disagree."""
    F = check_fidelity(F)
    return 2.0 * (1.0 - F) / 3.0


def inverse_swap_share(F_target: float, hops: int) -> float:
    """Per-link fidelity whose ``hops``-fold swap composition gives ``F_target``."""
    w = werner_from_fidelity(F_target)
    return fidelity_from_werner(w ** (1.0 / hops))


# --------------------------------------------------------------------------
# names and resources

@dataclass(frozen=True, order=True)
class ExternalName:
    minter: str
    timestamp: int
    sequence: int = 0

    def __str__(self) -> str:
        return f"<{self.minter},{self.timestamp},{self.sequence}>"


@dataclass(frozen=True, order=True)
class PhysicalQubitAddr:
    qnic_address: str
    qubit_index: int


class NameMinter:
    """Mints globally unique external names for one simulation run."""

    def __init__(self) -> None:
        self._last: dict = {}

    def mint(self, minter: str, now: int) -> ExternalName:
        key = (minter, now)
        seq = self._last.get(key, -1) + 1
        self._last[key] = seq
        if len(self._last) > 4096:
            # only same-tick collisions matter; keep the current tick
            self._last = {k: v for k, v in self._last.items() if k[1] == now}
        return ExternalName(minter, now, seq)


@dataclass(eq=False)
class BellPair:
    """Simulator ground truth for one shared pair; never visible to RuleSets.

    ``rate`` is the summed depolarization rate of the memories currently
    holding the two halves.
    """

    name: ExternalName
    fidelity: float
    updated: int
    rate: float = 0.0
    terminal: Optional[str] = None
    connection: Optional[str] = None
    raw: bool = True
    # basis/outcome bookkeeping for measure-on-arrival ends
    meas: dict = field(default_factory=dict)
    rounds: int = 0  # successful purification rounds so far
    open_halves: int = 2
    delivered_ends: set = field(default_factory=set)

    def fidelity_at(self, now: int) -> float:
        dt = (now - self.updated) / PS_PER_SECOND
        return decohere_rate(self.fidelity, dt, self.rate)

    def settle(self, now: int) -> float:
        self.fidelity = self.fidelity_at(now)
        self.updated = now
        return self.fidelity


@dataclass(eq=False)
class EntangledResource:
    name: ExternalName
    local_qubit: Optional[PhysicalQubitAddr]
    partner_node: str
    est_fidelity: float
    birth_time: int
    pair: BellPair
    est_updated: int = 0
    est_rate: float = 0.0
    owner: Optional[Tuple[str, int]] = None
    connection: Optional[str] = None
    pending: bool = False
    measured: bool = False
    pauli: str = "I"
    state: str = "live"
    timers: list = field(default_factory=list)

    @property
    def true_fidelity(self) -> float:
        return self.pair.fidelity

    def true_fidelity_at(self, now: int) -> float:
        return self.pair.fidelity_at(now)

    def est_fidelity_at(self, now: int) -> float:
        dt = (now - self.est_updated) / PS_PER_SECOND
        return decohere_rate(self.est_fidelity, dt, self.est_rate)

    def set_est(self, F: float, now: int) -> None:
        self.est_fidelity = clamp_fidelity(F)
        self.est_updated = now

    def assign(self, ruleset_id: str, stage: int) -> None:
        if self.owner is not None:
            if self.owner[0] != ruleset_id:
                raise RuntimeError(f"{self.name} already owned by {self.owner[0]}")
            if stage < self.owner[1]:
                raise RuntimeError(f"{self.name}: stage may only increase")
        self.owner = (ruleset_id, stage)

    def sort_key(self):
        return (self.birth_time, self.name)


_PAULI = {"I": (0, 0), "X": (1, 0), "Z": (0, 1), "XZ": (1, 1)}
_PAULI_INV = {v: k for k, v in _PAULI.items()}


def compose_pauli(a: str, b: str) -> str:
    """Compose two Pauli frame entries, ignoring global phase."""
    xa, za = _PAULI[a]
    xb, zb = _PAULI[b]
    return _PAULI_INV[(xa ^ xb, za ^ zb)]


def pauli_flips(frame: str, basis: str) -> int:
    """1 if the frame flips a measurement outcome in ``basis``."""
    x, z = _PAULI[frame]
    return x if basis == "Z" else z
