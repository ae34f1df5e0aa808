import pytest

from qrsim.config import build_network, parse_config


def chain_config(n, base=0.95, length=10.0, rate=1.0e4, F=0.9, duration=0.2, seed=1,
                 discipline="statmux", end_type="COMP", t_mem=None, **conn):
    names = [f"N{i}" for i in range(n)]
    nodes = []
    for i, name in enumerate(names):
        t = end_type if i in (0, n - 1) else "REP1"
        node = {"name": name, "type": t}
        if t == "MEAS":
            node["memory_qubits"] = 0
        if t_mem is not None and t != "MEAS":
            node["t_mem"] = t_mem
        nodes.append(node)
    links = [{"id": f"l{i}", "endpoints": [names[i], names[i + 1]], "length_km": length,
              "base_fidelity": base, "attempt_rate": rate} for i in range(n - 1)]
    c = {"id": "c1", "initiator": names[0], "responder": names[-1], "min_fidelity": F}
    c.update(conn)
    return {"nodes": nodes, "links": links, "seed": seed, "duration": duration,
            "discipline": discipline, "connections": [c]}


def run_config(data, **kw):
    cfg = parse_config(data)
    net = build_network(cfg, **kw)
    stats = net.run(cfg.duration)
    return net, stats


@pytest.fixture
def chain():
    return chain_config


def dumbbell_config(discipline="statmux", seed=1, duration=0.2, base=0.97, F=0.85, rate=1.0e4):
    ends = ["A1", "A2", "B1", "B2"]
    nodes = [{"name": n, "type": "COMP"} for n in ends] + [
        {"name": "L", "type": "RTR"}, {"name": "R", "type": "RTR"}]
    links = [{"id": f"{a}{b}", "endpoints": [a, b], "length_km": 5, "base_fidelity": base,
              "attempt_rate": rate}
             for a, b in (("A1", "L"), ("A2", "L"), ("L", "R"), ("R", "B1"), ("R", "B2"))]
    links[2]["attempt_rate"] = rate * 2
    conns = [{"id": "c1", "initiator": "A1", "responder": "B1", "min_fidelity": F},
             {"id": "c2", "initiator": "A2", "responder": "B2", "min_fidelity": F}]
    return {"nodes": nodes, "links": links, "seed": seed, "duration": duration,
            "discipline": discipline, "connections": conns}


def two_network_config(seed=3, duration=0.2, F=0.85):
    link = lambda i, a, b: {"id": i, "endpoints": [a, b], "length_km": 5, "base_fidelity": 0.98}
    return {
        "nodes": [{"name": n, "type": t} for n, t in (("E1", "COMP"), ("X1", "REP1"), ("RX", "RTR"),
                                                      ("RY", "RTR"), ("Y1", "REP1"), ("E2", "COMP"))],
        "links": [link("e1x1", "E1", "X1"), link("x1rx", "X1", "RX"), link("c", "RX", "RY"),
                  link("ryy1", "RY", "Y1"), link("y1e2", "Y1", "E2")],
        "networks": [{"name": "X", "members": ["E1", "X1", "RX"], "borders": ["RX"]},
                     {"name": "Y", "members": ["RY", "Y1", "E2"], "borders": ["RY"]}],
        "seed": seed, "duration": duration,
        "connections": [{"id": "c1", "initiator": "E1", "responder": "E2", "min_fidelity": F}]}


def three_deep_config(seed=1, duration=0.2, F=0.85):
    link = lambda i, a, b: {"id": i, "endpoints": [a, b], "length_km": 5, "base_fidelity": 0.99}
    return {
        "nodes": [{"name": n, "type": t} for n, t in (("E1", "COMP"), ("a1", "REP1"), ("RA1", "RTR"),
                                                      ("RA", "RTR"), ("RB", "RTR"), ("b1", "REP1"),
                                                      ("E2", "COMP"))],
        "links": [link("e1a1", "E1", "a1"), link("a1ra1", "a1", "RA1"), link("ra1ra", "RA1", "RA"),
                  link("rarb", "RA", "RB"), link("rbb1", "RB", "b1"), link("b1e2", "b1", "E2")],
        "networks": [{"name": "A", "members": ["RA"], "borders": ["RA"]},
                     {"name": "A1", "parent": "A", "members": ["E1", "a1", "RA1"], "borders": ["RA1"]},
                     {"name": "B", "members": ["RB", "b1", "E2"], "borders": ["RB"]}],
        "seed": seed, "duration": duration,
        "connections": [{"id": "c1", "initiator": "E1", "responder": "E2", "min_fidelity": F}]}


def assert_clean(net):
    assert net.faults() == {}
    assert net.accounting()["balanced"] == 1
    assert net.name_sweep() == []
