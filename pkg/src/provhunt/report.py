"""Hunt report rendering: machine JSON, flat text summary, and DOT export."""

from __future__ import annotations

import json
from fractions import Fraction
from pathlib import Path

from .align import HuntResult, SearchConfig
from .query import QueryGraph


def _frac(value: Fraction) -> dict:
    return {"value": str(value), "float": float(value)}


def _node_ref(g, nid: int | None) -> dict | None:
    if nid is None:
        return None
    return {"id": nid, "kind": g.kind_of(nid), "label": g.label_of(nid)}


def _flow_entry(g, i: str, j: str, res) -> dict:
    entry = {
        "src": i,
        "dst": j,
        "gamma": _frac(res.gamma),
        "cmin": res.cmin,
    }
    if res.witness_path:
        path = [
            _node_ref(g, nid) for nid in res.witness_path
        ]
        t_first = None
        t_last = None
        for u, v in zip(res.witness_path, res.witness_path[1:]):
            for edge in g.edges_between(u, v):
                t_first = edge.t_first if t_first is None else min(t_first, edge.t_first)
                t_last = edge.t_last if t_last is None else max(t_last, edge.t_last)
        entry["witness"] = {
            "roots": [_node_ref(g, r) for r in (res.witness_roots or ())],
            "path": path,
            "t_first": t_first,
            "t_last": t_last,
        }
    return entry


def build_report(result: HuntResult, q: QueryGraph, g, cfg: SearchConfig,
                 query_name: str | None = None) -> dict:
    best = result.best
    return {
        "query": query_name or q.name,
        "config": {
            "cthr": cfg.cthr,
            "tau": _frac(cfg.threshold),
            "max_iterations": cfg.max_iterations,
            "rng_seed": cfg.rng_seed,
            "stop_on_first_alarm": cfg.stop_on_first_alarm,
        },
        "alarm": result.alarm,
        "score": _frac(best.score),
        "flow_count": q.flow_count,
        "seed": None if best.seed is None else {
            "qid": best.seed[0], "node": _node_ref(g, best.seed[1])},
        "assignment": {qid: _node_ref(g, nid)
                       for qid, nid in best.assignment.items()},
        "flows": [_flow_entry(g, i, j, res)
                  for (i, j), res in sorted(best.per_flow.items())],
        "iterations": [
            {"iteration": rec.iteration, "seed_qid": rec.seed_qid,
             "seed_node": _node_ref(g, rec.seed_node),
             "score": _frac(rec.score), "alarm": rec.alarm}
            for rec in result.iterations
        ],
    }


def recompute_score(report: dict) -> Fraction:
    """Score from the report's own per-flow gammas; must equal report['score']."""
    flows = report["flows"]
    if not flows:
        raise ValueError("report has no flows")
    total = sum(Fraction(f["gamma"]["value"]) for f in flows)
    return total / len(flows)


def render_text(report: dict) -> str:
    lines = [
        f"query:      {report['query']}",
        f"alarm:      {'YES' if report['alarm'] else 'no'}",
        f"score:      {report['score']['value']} "
        f"(threshold {report['config']['tau']['value']})",
        f"iterations: {len(report['iterations'])}",
        "",
        "alignment:",
    ]
    for qid, ref in report["assignment"].items():
        if ref is None:
            lines.append(f"  {qid:<12} -> (unaligned)")
        else:
            lines.append(f"  {qid:<12} -> [{ref['id']}] {ref['kind']}: {ref['label']}")
    lines.append("")
    lines.append("flows:")
    for f in report["flows"]:
        mark = f"gamma={f['gamma']['value']}"
        lines.append(f"  {f['src']} ~> {f['dst']}  {mark}")
        if "witness" in f:
            hops = " -> ".join(p["label"] for p in f["witness"]["path"])
            lines.append(f"      via {hops}")
            lines.append(f"      t=[{f['witness']['t_first']}, {f['witness']['t_last']}]")
    return "\n".join(lines) + "\n"


def render_dot(report: dict) -> str:
    """Aligned subgraph plus witness paths, in Graphviz DOT."""
    nodes: dict[int, str] = {}
    edges: set[tuple[int, int]] = set()
    for ref in report["assignment"].values():
        if ref is not None:
            nodes[ref["id"]] = ref["label"]
    for f in report["flows"]:
        w = f.get("witness")
        if not w:
            continue
        path = w["path"]
        for p in path:
            nodes.setdefault(p["id"], p["label"])
        for u, v in zip(path, path[1:]):
            edges.add((u["id"], v["id"]))
    out = ["digraph alignment {"]
    qid_of = {ref["id"]: qid for qid, ref in report["assignment"].items()
              if ref is not None}
    for nid in sorted(nodes):
        label = nodes[nid].replace("\\", "\\\\").replace('"', '\\"')
        if nid in qid_of:
            out.append(f'  n{nid} [label="{qid_of[nid]}: {label}" shape=box];')
        else:
            out.append(f'  n{nid} [label="{label}"];')
    for u, v in sorted(edges):
        out.append(f"  n{u} -> n{v};")
    out.append("}")
    return "\n".join(out) + "\n"


def write_report_files(report: dict, path) -> list[Path]:
    """Write <path> (JSON) plus .txt and .dot siblings; returns the paths."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", "utf-8")
    txt = p.with_suffix(".txt")
    txt.write_text(render_text(report), "utf-8")
    dot = p.with_suffix(".dot")
    dot.write_text(render_dot(report), "utf-8")
    return [p, txt, dot]
