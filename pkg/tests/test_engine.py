import pytest

from conftest import assert_clean, chain_config, run_config
from qrsim.ruleset import FreeMsg


def test_rules_fire_at_every_active_node():
    net, _ = run_config(chain_config(4, base=0.95, F=0.9, duration=0.05))
    for n, eng in net.engines.items():
        assert eng.firings > 0, n
    assert net.engines["N1"].swaps > 0 and net.engines["N0"].swaps == 0


def test_tight_discard_window_frees_but_stays_consistent():
    data = chain_config(5, base=0.95, F=0.85, duration=0.1, rate=2.0e3)
    data["policy"] = {"discard_factor": 0.05, "min_discard": 0.0}
    net, _ = run_config(data)
    assert net.accounting()["freed"] > 0
    assert_clean(net)


def test_uninstalled_connection_ignores_messages():
    net, _ = run_config(chain_config(2, duration=0.01, stop=0.005))
    eng = net.engines["N0"]
    before = dict(eng.faults)
    eng.on_message("N1", FreeMsg("c1", "N1", ()))
    assert dict(eng.faults) == before


def test_live_resources_bounded_by_memory():
    net, _ = run_config(chain_config(3, base=0.95, F=0.9, duration=0.05))
    for (node, link), bank in net.banks.items():
        if bank.capacity is not None:
            assert 0 <= bank.in_use <= bank.capacity


def test_messages_for_pending_connection_wait_for_install():
    from qrsim.ruleset import RuleSet, Stage
    net, _ = run_config(chain_config(2, duration=0.001))
    eng = net.engines["N0"]
    eng.on_message("N1", FreeMsg("later", "N1", ()))
    assert len(eng.awaiting["later"]) == 1
    eng.install(RuleSet("later@N0", "later", "N0", (Stage(0),)))
    assert "later" not in eng.awaiting
    eng.uninstall("later")
    eng.on_message("N1", FreeMsg("later", "N1", ()))
    assert "later" not in eng.awaiting
