import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qrsim.oracle import (bell_fidelity, depolarize_one, oracle_two_pair, purify_summary,
                          swap_summary, werner_state, zz_mismatch)
from qrsim.state import (BellPair, EntangledResource, ExternalName, FidelityDomainError, NameMinter,
                         clamp_fidelity, compose_pauli, decohere, fidelity_from_werner, pauli_flips,
                         purify_outcome, qber_z, swap_fidelity, werner_from_fidelity)

fid = st.floats(0.25, 1.0)
GRID = [round(0.25 + 0.05 * i, 2) for i in range(16)]


def test_werner_examples():
    assert werner_from_fidelity(1.0) == 1.0
    assert werner_from_fidelity(0.25) == 0.0
    assert werner_from_fidelity(0.625) == pytest.approx(0.5, abs=1e-15)


def test_werner_domain():
    for bad in (0.2, 1.1, float("nan")):
        with pytest.raises(FidelityDomainError):
            werner_from_fidelity(bad)


def test_round_trip_10k():
    rng = np.random.default_rng(0)
    for F in rng.uniform(0.25, 1.0, 10_000):
        assert fidelity_from_werner(werner_from_fidelity(F)) == pytest.approx(F, abs=1e-15)


def test_swap_examples():
    assert swap_fidelity(1.0, 1.0) == 1.0
    assert swap_fidelity(1.0, 0.7) == pytest.approx(0.7, abs=1e-15)
    # frozen from the density-matrix oracle
    assert swap_fidelity(0.9, 0.9) == pytest.approx(0.8133333333, abs=1e-9)


def test_purify_examples():
    assert purify_outcome(1.0, 1.0) == (1.0, 1.0)
    p, f = purify_outcome(0.9, 0.9)
    assert (p, f) == (pytest.approx(0.8755555556, abs=1e-9), pytest.approx(0.9263959391, abs=1e-9))
    p, f = purify_outcome(0.7, 0.7)
    assert (p, f) == (pytest.approx(0.68, abs=1e-9), pytest.approx(0.7352941176, abs=1e-9))


def test_decohere_examples():
    assert decohere(0.9, 0.0, 1.0) == 0.9
    assert decohere(0.9, 1e6, 1.0) == pytest.approx(0.25)
    assert decohere(0.95, 1.0, 1.0) == pytest.approx(0.50751, abs=1e-5)
    with pytest.raises(ValueError):
        decohere(0.9, -1.0, 1.0)
    with pytest.raises(ValueError):
        decohere(0.9, 1.0, 0.0)


def test_decohere_matches_depolarizing_oracle():
    rho = werner_state(0.95)
    out = depolarize_one(rho, math.exp(-1.0))
    assert bell_fidelity(out) == pytest.approx(decohere(0.95, 1.0, 1.0), abs=1e-12)


def test_qber_examples():
    assert qber_z(1.0) == 0.0
    assert qber_z(0.25) == pytest.approx(0.5)
    assert qber_z(0.9) == pytest.approx(0.0666667, abs=1e-6)
    assert zz_mismatch(werner_state(0.9)) == pytest.approx(qber_z(0.9), abs=1e-12)


def test_oracle_trivial_branches():
    br = oracle_two_pair(1.0, 1.0, "purify")
    kept = [b for b in br if b.kept]
    assert sum(b.probability for b in kept) == pytest.approx(1.0)
    assert all(b.fidelity == pytest.approx(1.0) for b in kept if b.probability > 0)
    for b in oracle_two_pair(0.8, 1.0, "swap"):
        assert b.probability == pytest.approx(0.25)
        assert b.fidelity == pytest.approx(0.8)
    with pytest.raises(ValueError):
        oracle_two_pair(0.9, 0.9, "teleport")


def test_oracle_self_consistency():
    p, f = purify_summary(0.9, 0.9)
    assert (p, f) == (pytest.approx(purify_outcome(0.9, 0.9)[0], abs=1e-12),
                      pytest.approx(purify_outcome(0.9, 0.9)[1], abs=1e-12))


@pytest.mark.parametrize("F1", GRID)
def test_closed_forms_match_oracle_grid(F1):
    for F2 in GRID:
        assert swap_fidelity(F1, F2) == pytest.approx(swap_summary(F1, F2), abs=1e-9)
        p, f = purify_outcome(F1, F2)
        po, fo = purify_summary(F1, F2)
        assert p == pytest.approx(po, abs=1e-9)
        assert f == pytest.approx(fo, abs=1e-9)


@given(fid, fid)
def test_purify_symmetric(a, b):
    assert purify_outcome(a, b) == purify_outcome(b, a)


@given(st.floats(0.5, 1.0), st.floats(0.5, 1.0))
def test_purify_never_worse_than_min(a, b):
    assert purify_outcome(a, b)[1] >= min(a, b) - 1e-12


@given(fid, fid)
def test_swap_not_better_than_min(a, b):
    if a < 1.0 or b < 1.0:
        assert swap_fidelity(a, b) <= min(a, b) + 1e-12


@given(fid, st.floats(0, 10), st.floats(0, 10), st.floats(0.01, 100))
def test_decohere_monoid(F, a, b, T):
    assert decohere(decohere(F, a, T), b, T) == pytest.approx(decohere(F, a + b, T), abs=1e-12)


def test_clamp_logs(caplog):
    assert clamp_fidelity(0.1) == 0.25
    assert "clamped" in caplog.text
    assert clamp_fidelity(1.2) == 1.0


def test_minter_unique():
    m = NameMinter()
    names = [m.mint("A", t // 3) for t in range(30)] + [m.mint("B", 0)]
    assert len(set(names)) == len(names)
    assert str(ExternalName("A", 5, 1)) == "<A,5,1>"


def test_owner_is_sticky():
    pair = BellPair(ExternalName("A", 0), 0.9, 0)
    r = EntangledResource(pair.name, None, "B", 0.9, 0, pair)
    r.assign("rs1", 0)
    r.assign("rs1", 2)
    with pytest.raises(RuntimeError):
        r.assign("rs2", 2)
    with pytest.raises(RuntimeError):
        r.assign("rs1", 1)


def test_pauli_frame():
    assert compose_pauli("X", "Z") == "XZ"
    assert compose_pauli("XZ", "XZ") == "I"
    assert pauli_flips("X", "Z") == 1 and pauli_flips("X", "X") == 0
    assert pauli_flips("Z", "X") == 1
