import io

import pytest

from conftest import assert_clean, chain_config, dumbbell_config, run_config
from qrsim.config import build_network, parse_config
from qrsim.kernel import MS, SECOND
from qrsim.state import qber_z, swap_fidelity


def test_three_node_chain_fidelity():
    net, stats = run_config(chain_config(3, base=0.9, F=0.8))
    st = net.conn_stats["c1"]
    assert st.delivered > 500
    assert st.mean_fidelity == pytest.approx(swap_fidelity(0.9, 0.9), abs=1e-9)
    assert_clean(net)


def test_setup_message_counts():
    for n in (2, 3, 5):
        net, _ = run_config(chain_config(n, base=0.98, F=0.85, duration=0.01))
        rec = net.manager.records["c1"]
        assert rec.status == "established"
        assert rec.request_messages == n - 1
        assert rec.install_messages == n
        assert rec.acks == set(rec.route) or len(rec.acks) == n
        # at least one outbound and one return traversal of the path
        assert rec.setup_latency >= 2 * (n - 1) * 50 * 1_000_000


def test_pumped_chain_meets_target():
    net, _ = run_config(chain_config(4, base=0.95, F=0.9, duration=0.3))
    st = net.conn_stats["c1"]
    assert st.delivered > 20
    assert st.mean_fidelity >= 0.9 - 0.005
    assert st.purify_attempts > 0
    assert_clean(net)


def test_infeasible_connection_fails_cleanly():
    net, _ = run_config(chain_config(3, base=0.95, F=0.95, duration=0.01))
    rec = net.manager.records["c1"]
    assert rec.status == "failed" and "infeasible fidelity" in rec.reason
    assert net.leaks("c1") == []
    assert_clean(net)


def test_no_route():
    data = chain_config(3, duration=0.01)
    data["links"].pop()
    net, _ = run_config(data)
    rec = net.manager.records["c1"]
    assert rec.status == "failed" and "no route" in rec.reason


def test_teardown_leaves_nothing_behind():
    data = chain_config(4, base=0.95, F=0.9, duration=0.1, stop=0.05)
    net, _ = run_config(data)
    assert net.manager.records["c1"].status == "torn_down"
    assert net.leaks("c1") == []
    assert not any(r.enabled for r in net.runners.values())
    assert all(b.in_use == 0 for b in net.banks.values())
    assert_clean(net)


def test_unknown_teardown_warns():
    net, _ = run_config(chain_config(2, duration=0.01))
    net.manager.teardown("nope")
    assert any("nope" in w for w in net.manager.warnings)


def test_count_mode_stops_after_count():
    net, _ = run_config(chain_config(3, base=0.9, F=0.8, duration=0.2, mode="count", count=25))
    assert net.conn_stats["c1"].delivered == 25
    assert net.manager.records["c1"].status == "torn_down"
    assert net.leaks("c1") == []
    assert_clean(net)


def test_meas_ends_qber():
    net, _ = run_config(chain_config(3, base=0.9, F=0.8, end_type="MEAS", duration=0.3))
    st = net.conn_stats["c1"]
    rate, n = st.qber("Z")
    p = qber_z(swap_fidelity(0.9, 0.9))
    assert n > 500
    assert abs(rate - p) < 3 * (p * (1 - p) / n) ** 0.5
    assert_clean(net)


def test_memory_decoherence_lowers_fidelity():
    ideal, _ = run_config(chain_config(3, base=0.9, F=0.6, duration=0.1))
    noisy, _ = run_config(chain_config(3, base=0.9, F=0.6, duration=0.1, t_mem=0.001))
    assert noisy.conn_stats["c1"].mean_fidelity < ideal.conn_stats["c1"].mean_fidelity - 1e-3
    assert_clean(noisy)


@pytest.mark.parametrize("arch, mid", [("bsa", "BSA"), ("epps", "EPPS")])
def test_midpoint_links(arch, mid):
    data = chain_config(2, base=0.95, F=0.9, duration=0.1)
    data["nodes"].append({"name": "M", "type": mid, "memory_qubits": 0})
    data["links"][0].update(architecture=arch, midpoint="M")
    net, _ = run_config(data)
    assert net.conn_stats["c1"].delivered > 50
    assert net.runners["l0"].p <= 0.5
    assert_clean(net)


def test_optical_switch_adds_loss():
    data = chain_config(2, duration=0.05)
    data["nodes"].append({"name": "S", "type": "OSW", "memory_qubits": 0, "switch_loss_db": 3})
    data["links"][0].update(switch="S")
    net, _ = run_config(data)
    plain, _ = run_config(chain_config(2, duration=0.05))
    assert net.runners["l0"].p == pytest.approx(plain.runners["l0"].p / 10 ** 0.3)


def test_single_interface_node():
    data = chain_config(3, base=0.9, F=0.8, duration=0.1)
    data["nodes"][1].update(single_active_interface=True, switch_time=1e-5)
    net, _ = run_config(data)
    assert net.conn_stats["c1"].delivered > 10
    assert_clean(net)


@pytest.mark.parametrize("discipline", ["statmux", "tdm", "bufferspace"])
def test_disciplines_share_dumbbell(discipline):
    net, _ = run_config(dumbbell_config(discipline, duration=0.1))
    for c in ("c1", "c2"):
        assert net.manager.records[c].status == "established"
        assert net.conn_stats[c].delivered > 0
    assert_clean(net)


def test_circuit_refuses_second_connection():
    net, _ = run_config(dumbbell_config("circuit", duration=0.1))
    st = {c: net.manager.records[c].status for c in ("c1", "c2")}
    assert sorted(st.values()) == ["established", "failed"]
    failed = next(c for c, s in st.items() if s == "failed")
    assert "reserved" in net.manager.records[failed].reason
    assert_clean(net)


def test_same_seed_same_trace():
    def trace(seed):
        buf = io.StringIO()
        build = build_network(parse_config(dumbbell_config(seed=seed, duration=0.02)), trace=buf)
        build.run(0.02)
        return buf.getvalue()
    a, b = trace(4), trace(4)
    assert a == b and len(a) > 1000
    assert trace(5) != a


def test_estimated_equals_true_without_injection():
    net, _ = run_config(chain_config(3, base=0.9, F=0.8, duration=0.05))
    st = net.conn_stats["c1"]
    assert st.est_fidelity_sum / st.delivered == pytest.approx(st.mean_fidelity, abs=1e-9)
