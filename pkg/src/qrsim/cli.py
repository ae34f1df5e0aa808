"""Command line entry point."""

from __future__ import annotations

import argparse
import logging
import math
import os
import platform
import sys
import time
from typing import List, Optional

from . import __version__
from .config import ConfigError, build_network, load_config
from .connection import Requirements, plan_offline
from .metrics import records, write_jsonl, write_outputs
from .network import Network
from .routing import link_cost

EXIT_OK = 0
EXIT_FAULT = 1
EXIT_CONFIG = 2
EXIT_VERIFY = 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qrsim", description="Quantum repeater network simulator.")
    p.add_argument("--topology", metavar="PATH", help="topology file (YAML)")
    p.add_argument("--scenario", metavar="PATH", help="scenario file (YAML); may be the same file")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--duration", type=float, metavar="SECONDS", help="override the simulated duration")
    p.add_argument("--output", metavar="DIR", help="directory for metrics.jsonl, run_info.json, trace.log")
    p.add_argument("--trace", action="store_true", help="write one line per executed event")
    p.add_argument("--verify-only", action="store_true",
                   help="generate and verify RuleSets for every connection, run no events")
    p.add_argument("--route", nargs=2, metavar=("SRC", "DST"), help="print the qDijkstra route and exit")
    p.add_argument("--index-fidelity", type=float, metavar="F", help="index fidelity for --route")
    p.add_argument("--allow-faults", action="store_true", help="exit 0 even if protocol faults occurred")
    p.add_argument("--log-level", default="WARNING", help=argparse.SUPPRESS)
    p.add_argument("--version", action="version", version=f"qrsim {__version__}")
    return p


def _fmt(x: float) -> str:
    return "inf" if math.isinf(x) else f"{x:.6g}"


def _route(cfg, src: str, dst: str, F: float, out) -> int:
    topo = cfg.topology
    for n in (src, dst):
        if n not in topo.nodes:
            print(f"error: unknown node {n!r}", file=sys.stderr)
            return EXIT_CONFIG
    r = topo.route(src, dst, F)
    print(f"source: {src}\ndestination: {dst}\nindex_fidelity: {F}", file=out)
    if r is None:
        print("route: null", file=out)
        return EXIT_FAULT
    print(f"network: {r.network or 'root'}\nlayer: {r.layer}", file=out)
    print(f"path: [{', '.join(r.path)}]", file=out)
    print(f"cost_seconds_per_pair: {_fmt(r.cost)}", file=out)
    print("hops:", file=out)
    for i, (kind, key) in enumerate(r.hops):
        u, v = r.path[i], r.path[i + 1]
        if kind == "link":
            c = link_cost(topo.links[key], F)
            extra = f"seconds_per_pair: {_fmt(c.seconds_per_pair)}, rounds: {c.rounds}"
        else:
            vl = topo.virtual_link(key, u, v)
            extra = f"seconds_per_pair: {_fmt(vl.seconds_per_pair)}, advertised_fidelity: {vl.fidelity:.6g}"
        print(f"  - {{{kind}: {key}, from: {u}, to: {v}, {extra}}}", file=out)
    return EXIT_OK


def _verify_only(cfg, out) -> int:
    net = Network(cfg.topology, seed=cfg.seed, discipline=cfg.discipline, channels=cfg.channels,
                  loopback=cfg.loopback, processing_delay=cfg.processing_delay, policy=cfg.policy)
    status = EXIT_OK
    print("connections:", file=out)
    for c in cfg.connections:
        plans = plan_offline(net, c.connection_id, c.initiator, c.responder,
                             Requirements(c.min_fidelity, c.mode, c.count), cfg.policy, cfg.verify_bound)
        for p in plans:
            print(f"  - id: {p.connection_id}\n    route: [{', '.join(p.route)}]", file=out)
            if p.error:
                print(f"    status: error\n    error: {p.error!r}", file=out)
                status = EXIT_VERIFY
                continue
            body = p.report.to_text().splitlines()
            print("\n".join("    " + line for line in body), file=out)
            if not p.report.ok:
                status = EXIT_VERIFY
    if net.sim.events_executed:
        raise AssertionError("verify-only executed events")
    return status


def main(argv: Optional[List[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.route and args.index_fidelity is None:
        print("error: --route needs --index-fidelity", file=sys.stderr)
        return EXIT_CONFIG
    if args.index_fidelity is not None and not args.route:
        print("error: --index-fidelity is only meaningful with --route", file=sys.stderr)
        return EXIT_CONFIG
    if args.index_fidelity is not None and not 0.25 <= args.index_fidelity <= 1.0:
        print("error: --index-fidelity must lie in [0.25, 1]", file=sys.stderr)
        return EXIT_CONFIG
    if args.duration is not None and not args.duration > 0:
        print("error: --duration must be positive", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None and args.seed < 0:
        print("error: --seed must be non-negative", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.topology, args.scenario)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None:
        cfg.seed = args.seed
    if args.duration is not None:
        cfg.duration = args.duration

    if args.route:
        return _route(cfg, args.route[0], args.route[1], args.index_fidelity, sys.stdout)
    if args.verify_only:
        return _verify_only(cfg, sys.stdout)
    return run(cfg, args.output, args.trace, args.allow_faults)


def run(cfg, output: Optional[str], trace: bool, allow_faults: bool) -> int:
    trace_fh = None
    if trace:
        if output:
            os.makedirs(output, exist_ok=True)
            trace_fh = open(os.path.join(output, "trace.log"), "w", encoding="utf-8")
        else:
            trace_fh = sys.stderr
    t0 = time.perf_counter()
    try:
        net = build_network(cfg, trace=trace_fh)
        stats = net.run(cfg.duration)
    finally:
        if trace_fh is not None and trace_fh is not sys.stderr:
            trace_fh.close()
    wall = time.perf_counter() - t0
    recs = records(net, stats, cfg.duration)
    if output:
        write_outputs(output, recs, {"wall_clock_s": wall, "events": stats.events,
                                     "events_per_s": stats.events / wall if wall > 0 else None,
                                     "python": platform.python_version(), "sources": list(cfg.sources),
                                     "version": __version__})
    else:
        write_jsonl(recs, sys.stdout)

    faults = net.faults()
    acc = net.accounting()
    sweep = net.name_sweep()
    summary = [f"events={stats.events} simulated={cfg.duration}s wall={wall:.2f}s"]
    for cid in sorted(net.conn_stats):
        st = net.conn_stats[cid]
        rec = net.manager.records.get(cid)
        mf = st.mean_fidelity
        summary.append(f"{cid}: status={rec.status if rec else '?'} delivered={st.delivered} "
                       f"mean_F={'-' if mf is None else f'{mf:.4f}'}")
    for cid, rec in sorted(net.manager.records.items()):
        if rec.status == "failed":
            summary.append(f"{cid}: failed: {rec.reason}")
    problems = []
    if faults:
        problems.append("protocol faults: " + ", ".join(f"{k}={v}" for k, v in sorted(faults.items())))
    if not acc["balanced"]:
        problems.append(f"accounting identity violated: {acc}")
    if sweep:
        problems.append(f"name sweep: {len(sweep)} inconsistent names")
    for line in summary + problems:
        print(line, file=sys.stderr)
    if problems and not allow_faults:
        return EXIT_FAULT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
