"""Line-delimited metrics records.

``metrics.jsonl`` holds one record per entity and is a pure function of the
configuration and seed.  Wall-clock figures go to ``run_info.json`` so that
repeated runs produce byte-identical metrics.
"""

from __future__ import annotations

import json
import os
from typing import Dict, IO, Iterable, List, Optional

from .kernel import SECOND

SCHEMA = "qrsim.metrics/1"


def _round(x: Optional[float]) -> Optional[float]:
    return None if x is None else float(f"{x:.12g}")


def connection_records(net, duration: float) -> Iterable[dict]:
    for cid in sorted(net.manager.records):
        rec = net.manager.records[cid]
        st = net.conn_stats.get(cid)
        delivered = st.delivered if st else 0
        lat = rec.setup_latency
        q = st.qber("Z") if st else None
        yield {
            "type": "connection", "id": cid, "initiator": rec.initiator, "responder": rec.responder,
            "parent": rec.parent, "layer": rec.layer, "network": rec.network,
            "route": list(rec.route or ()), "status": rec.status, "reason": rec.reason,
            "min_fidelity": rec.requirements.min_fidelity,
            "setup_latency_s": None if lat is None else lat / SECOND,
            "request_messages": rec.request_messages, "install_messages": rec.install_messages,
            "delivered": delivered,
            "pairs_per_second": _round(delivered / duration) if duration > 0 else 0.0,
            "mean_true_fidelity": _round(st.mean_fidelity) if st else None,
            "mean_est_fidelity": _round(st.est_fidelity_sum / delivered) if delivered else None,
            "purify_attempts": st.purify_attempts if st else 0,
            "purify_successes": st.purify_successes if st else 0,
            "raw_assigned": st.raw_assigned if st else 0,
            "qber_z": _round(q[0]) if q else None, "qber_z_samples": q[1] if q else 0,
        }


def link_records(net) -> Iterable[dict]:
    for lid in sorted(net.runners):
        r = net.runners[lid]
        yield {"type": "link", "id": lid, "endpoints": list(r.spec.endpoints),
               "architecture": r.spec.architecture, "p_success": _round(r.p),
               "attempts": r.attempts, "successes": r.successes, "occupancy_stalls": r.stalled,
               "active_s": _round(r.active_time / SECOND)}


def node_records(net) -> Iterable[dict]:
    for n in sorted(net.topology.nodes):
        eng = net.engines.get(n)
        yield {"type": "node", "id": n, "node_type": net.topology.nodes[n].node_type,
               "protocol_faults": dict(sorted(eng.faults.items())) if eng else {},
               "rule_firings": eng.firings if eng else 0, "swaps": eng.swaps if eng else 0,
               "live_resources": len(eng.live_resources()) if eng else 0}


def global_record(net, stats, duration: float) -> dict:
    return {"type": "global", "schema": SCHEMA, "seed": net.sim.seed,
            "discipline": net.mux.discipline, "duration_s": duration,
            "events": stats.events, "end_time_s": _round(stats.now / SECOND),
            "pending_events": stats.pending,
            "messages": net.fabric.messages_sent, "stale_freed": net.stale_freed,
            "accounting": net.accounting(), "faults": dict(sorted(net.faults().items())),
            "name_sweep": net.name_sweep(), "warnings": list(net.manager.warnings)}


def records(net, stats, duration: float) -> List[dict]:
    out = [global_record(net, stats, duration)]
    out += connection_records(net, duration)
    out += link_records(net)
    out += node_records(net)
    for r in out:
        r.setdefault("schema", SCHEMA)
    return out


def write_jsonl(recs: Iterable[dict], fh: IO[str]) -> None:
    for r in recs:
        fh.write(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n")


def write_outputs(outdir: str, recs: List[dict], run_info: Dict[str, object]) -> Dict[str, str]:
    os.makedirs(outdir, exist_ok=True)
    paths = {"metrics": os.path.join(outdir, "metrics.jsonl"),
             "run_info": os.path.join(outdir, "run_info.json")}
    with open(paths["metrics"], "w", encoding="utf-8") as fh:
        write_jsonl(recs, fh)
    with open(paths["run_info"], "w", encoding="utf-8") as fh:
        json.dump(run_info, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths
