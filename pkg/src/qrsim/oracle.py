"""Brute-force density-matrix oracle for two-pair circuits.

Builds the 16x16 state of two Werner pairs and applies the circuit gate by
gate with explicit projective measurements.  Slow and independent of the
closed forms in :mod:`qrsim.state`; tests use it as ground truth.

Qubit order is (a1, b1, a2, b2): pair 1 is (a1, b1), pair 2 is (a2, b2).
For purification node A holds a1, a2 and node B holds b1, b2.  For swapping
the middle node holds b1 and a2.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import reduce
from typing import Iterable, List

import numpy as np

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
Y = 1j * X @ Z
H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
P0 = np.array([[1, 0], [0, 0]], dtype=complex)
P1 = np.array([[0, 0], [0, 1]], dtype=complex)

PHI_PLUS = np.array([1, 0, 0, 1], dtype=complex) / np.sqrt(2)


def werner_state(F: float) -> np.ndarray:
    phi = np.outer(PHI_PLUS, PHI_PLUS.conj())
    return F * phi + (1 - F) / 3 * (np.eye(4) - phi)


def _op(ops: dict, n: int) -> np.ndarray:
    return reduce(np.kron, [ops.get(i, I2) for i in range(n)])


def cnot(control: int, target: int, n: int) -> np.ndarray:
    return _op({control: P0}, n) + _op({control: P1, target: X}, n)


def _ptrace_keep(rho: np.ndarray, keep: List[int], n: int) -> np.ndarray:
    t = rho.reshape([2] * (2 * n))
    drop = [i for i in range(n) if i not in keep]
    # contract dropped qubits one at a time, highest index first
    for q in sorted(drop, reverse=True):
        m = t.ndim // 2
        t = np.trace(t, axis1=q, axis2=q + m)
    d = 2 ** len(keep)
    return t.reshape(d, d)


def bell_fidelity(rho4: np.ndarray) -> float:
    return float(np.real(PHI_PLUS.conj() @ rho4 @ PHI_PLUS))


@dataclass
class Branch:
    outcome: tuple
    probability: float
    state: np.ndarray
    fidelity: float
    kept: bool

    def as_record(self) -> dict:
        return {"outcome": list(self.outcome), "probability": self.probability,
                "fidelity": self.fidelity, "kept": self.kept}


def oracle_two_pair(F1: float, F2: float, circuit: str) -> List[Branch]:
    """Every measurement branch of ``circuit`` on two Werner pairs."""
    rho = np.kron(werner_state(F1), werner_state(F2))
    if circuit == "purify":
        return _purify(rho)
    if circuit == "swap":
        return _swap(rho)
    raise ValueError(f"unknown circuit {circuit!r}")


def _purify(rho: np.ndarray) -> List[Branch]:
    a1, b1, a2, b2 = range(4)
    U = cnot(b1, b2, 4) @ cnot(a1, a2, 4)
    rho = U @ rho @ U.conj().T
    out = []
    for ma in (0, 1):
        for mb in (0, 1):
            proj = _op({a2: P1 if ma else P0, b2: P1 if mb else P0}, 4)
            branch = proj @ rho @ proj
            p = float(np.real(np.trace(branch)))
            state = _ptrace_keep(branch / p, [a1, b1], 4) if p > 1e-15 else np.zeros((4, 4))
            out.append(Branch((ma, mb), p, state, bell_fidelity(state) if p > 1e-15 else 0.0,
                              kept=(ma == mb)))
    return out


def _swap(rho: np.ndarray) -> List[Branch]:
    a, b1, b2, c = range(4)
    # Bell measurement on (b1, b2): CNOT then H, then Z-measure both
    U = _op({b1: H}, 4) @ cnot(b1, b2, 4)
    rho = U @ rho @ U.conj().T
    out = []
    for m1 in (0, 1):
        for m2 in (0, 1):
            proj = _op({b1: P1 if m1 else P0, b2: P1 if m2 else P0}, 4)
            branch = proj @ rho @ proj
            p = float(np.real(np.trace(branch)))
            state = _ptrace_keep(branch / p, [a, c], 4)
            # Pauli frame correction on c: X^m2 Z^m1
            corr = np.kron(I2, (Z if m1 else I2) @ (X if m2 else I2))
            state = corr @ state @ corr.conj().T
            out.append(Branch((m1, m2), p, state, bell_fidelity(state), kept=True))
    return out


def purify_summary(F1: float, F2: float):
    branches = oracle_two_pair(F1, F2, "purify")
    p = sum(b.probability for b in branches if b.kept)
    f = sum(b.probability * b.fidelity for b in branches if b.kept) / p
    return p, f


def swap_summary(F1: float, F2: float) -> float:
    return sum(b.probability * b.fidelity for b in oracle_two_pair(F1, F2, "swap"))


def depolarize_one(rho4: np.ndarray, keep: float) -> np.ndarray:
    """Depolarizing channel on the second qubit, survival weight ``keep``."""
    reduced = _ptrace_keep(rho4, [0], 2)
    return keep * rho4 + (1 - keep) * np.kron(reduced, I2 / 2)


def zz_mismatch(rho4: np.ndarray) -> float:
    return float(np.real(rho4[1, 1] + rho4[2, 2]))


def export_records(rows: Iterable[dict]) -> str:
    """Line-delimited JSON for test fixtures."""
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)
