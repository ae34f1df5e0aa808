import json
import os
import subprocess
import sys

import pytest
import yaml

from conftest import chain_config, two_network_config
from qrsim import cli
from qrsim.network import Network


@pytest.fixture
def scenario(tmp_path):
    def make(data, name="s.yaml"):
        p = tmp_path / name
        p.write_text(yaml.safe_dump(data))
        return str(p)
    return make


def metrics(outdir):
    with open(os.path.join(outdir, "metrics.jsonl")) as fh:
        return [json.loads(line) for line in fh]


def test_run_writes_metrics(scenario, tmp_path, capsys):
    out = str(tmp_path / "out")
    rc = cli.main(["--scenario", scenario(chain_config(3, base=0.9, F=0.8, duration=0.05)),
                   "--output", out])
    assert rc == 0
    recs = metrics(out)
    kinds = [r["type"] for r in recs]
    assert kinds[0] == "global" and {"connection", "link", "node"} <= set(kinds)
    assert all(r["schema"] == "qrsim.metrics/1" for r in recs)
    g = recs[0]
    acc = g["accounting"]
    assert acc["balanced"] == 1
    assert acc["raw"] + acc["swap_products"] == (acc["purified"] + acc["swapped"] + acc["delivered"]
                                                 + acc["freed"] + acc["live"])
    conn = next(r for r in recs if r["type"] == "connection")
    assert conn["delivered"] > 0 and conn["mean_true_fidelity"] == pytest.approx(0.81333, abs=1e-4)
    assert conn["setup_latency_s"] > 0
    link = next(r for r in recs if r["type"] == "link")
    assert link["attempts"] >= link["successes"] > 0
    info = json.loads((tmp_path / "out" / "run_info.json").read_text())
    assert info["wall_clock_s"] > 0
    assert "c1: status=established" in capsys.readouterr().err


def test_separate_topology_and_scenario_files(scenario, tmp_path):
    data = chain_config(2, duration=0.01)
    topo = scenario({k: data[k] for k in ("nodes", "links")}, "t.yaml")
    scen = scenario({k: v for k, v in data.items() if k not in ("nodes", "links")}, "c.yaml")
    out = str(tmp_path / "o")
    assert cli.main(["--topology", topo, "--scenario", scen, "--output", out]) == 0
    assert metrics(out)[1]["status"] == "established"


def test_seed_and_duration_override(scenario, tmp_path):
    path = scenario(chain_config(2, duration=0.5, seed=1))
    runs = {}
    for seed in (1, 2):
        out = str(tmp_path / f"o{seed}")
        assert cli.main(["--scenario", path, "--seed", str(seed), "--duration", "0.01",
                         "--output", out]) == 0
        runs[seed] = metrics(out)
        assert runs[seed][0]["seed"] == seed and runs[seed][0]["duration_s"] == 0.01
    assert runs[1] != runs[2]


def test_byte_identical_metrics_and_trace(scenario, tmp_path):
    path = scenario(two_network_config(duration=0.02))
    blobs = []
    for i in range(2):
        out = tmp_path / f"o{i}"
        assert cli.main(["--scenario", path, "--output", str(out), "--trace"]) == 0
        blobs.append(((out / "metrics.jsonl").read_bytes(), (out / "trace.log").read_bytes()))
    assert blobs[0] == blobs[1]
    assert blobs[0][1].count(b"\n") > 100


def test_metrics_to_stdout_and_trace_to_stderr(scenario, capsys):
    assert cli.main(["--scenario", scenario(chain_config(2, duration=0.001)), "--trace"]) == 0
    cap = capsys.readouterr()
    assert json.loads(cap.out.splitlines()[0])["type"] == "global"
    assert "ScenarioAction" in cap.err


def test_verify_only_runs_no_events(scenario, capsys, monkeypatch):
    ran = []
    monkeypatch.setattr(Network, "run", lambda self, d=None: ran.append(d))
    rc = cli.main(["--scenario", scenario(two_network_config()), "--verify-only"])
    out = capsys.readouterr().out
    assert rc == 0 and ran == []
    assert out.count("status: pass") == 3
    doc = yaml.safe_load(out)
    assert [c["id"] for c in doc["connections"]] == ["c1", "c1/X#0", "c1/Y#2"]


def test_verify_only_reports_infeasible(scenario, capsys):
    rc = cli.main(["--scenario", scenario(chain_config(3, base=0.95, F=0.95)), "--verify-only"])
    assert rc == cli.EXIT_VERIFY
    assert "infeasible fidelity" in capsys.readouterr().out


def test_route(scenario, capsys):
    rc = cli.main(["--scenario", scenario(two_network_config()), "--route", "E1", "E2",
                   "--index-fidelity", "0.9"])
    doc = yaml.safe_load(capsys.readouterr().out)
    assert rc == 0
    assert doc["path"] == ["E1", "RX", "RY", "E2"]
    assert doc["hops"][0]["virtual"] == "X" and doc["hops"][1]["link"] == "c"
    assert doc["cost_seconds_per_pair"] > 0


def test_route_errors(scenario, capsys):
    path = scenario(chain_config(3, base=0.9))
    assert cli.main(["--scenario", path, "--route", "N0", "N2"]) == cli.EXIT_CONFIG
    assert cli.main(["--scenario", path, "--route", "N0", "Q", "--index-fidelity", "0.8"]) == cli.EXIT_CONFIG
    assert cli.main(["--scenario", path, "--route", "N0", "N2", "--index-fidelity", "0.99"]) == cli.EXIT_FAULT
    assert cli.main(["--scenario", path, "--index-fidelity", "0.8"]) == cli.EXIT_CONFIG
    assert "route: null" in capsys.readouterr().out


def test_faults_set_exit_status(scenario, monkeypatch, capsys):
    monkeypatch.setattr(Network, "faults", lambda self: {"DiscardRace": 2})
    path = scenario(chain_config(2, duration=0.001))
    assert cli.main(["--scenario", path]) == cli.EXIT_FAULT
    assert "protocol faults: DiscardRace=2" in capsys.readouterr().err
    assert cli.main(["--scenario", path, "--allow-faults"]) == cli.EXIT_OK


def test_config_errors_exit_2(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text("nodes:\n  - {name: A}\nlinks:\n  - {id: x, endpoints: [A, B], length_km: 1}\n")
    assert cli.main(["--scenario", str(p)]) == cli.EXIT_CONFIG
    assert "undefined node 'B'" in capsys.readouterr().err


def test_bad_flag_values(scenario):
    path = scenario(chain_config(2))
    assert cli.main(["--scenario", path, "--duration", "0"]) == cli.EXIT_CONFIG
    assert cli.main(["--scenario", path, "--seed", "-1"]) == cli.EXIT_CONFIG
    assert cli.main(["--scenario", path, "--route", "N0", "N1", "--index-fidelity", "2"]) == cli.EXIT_CONFIG


def test_console_script_and_module(scenario, tmp_path):
    path = scenario(chain_config(2, duration=0.001))
    for cmd in (["qrsim"], [sys.executable, "-m", "qrsim"]):
        r = subprocess.run(cmd + ["--scenario", path, "--output", str(tmp_path / "o")],
                           capture_output=True, text=True)
        assert r.returncode == 0, r.stderr


def test_shipped_scenarios_run(tmp_path):
    root = os.path.join(os.path.dirname(__file__), "..", "scenarios")
    for name in sorted(os.listdir(root)):
        rc = cli.main(["--scenario", os.path.join(root, name), "--duration", "0.01",
                       "--output", str(tmp_path / name)])
        assert rc == 0, name
