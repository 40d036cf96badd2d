from __future__ import annotations

import gzip
import json

import pytest

from provhunt.ingest import AuditEvent, IngestError, Ingestor, ingest_lines, ingest_path


def lines(records):
    return [json.dumps(r) for r in records]


def ev(event, spid, sexe, okind, oname, opid=None, ts=1, host=None):
    rec = {"ts": ts, "event": event, "subject": {"pid": spid, "exe": sexe},
           "object": {"kind": okind, "name": oname}}
    if opid is not None:
        rec["object"]["pid"] = opid
    if host is not None:
        rec["host"] = host
    return rec


def test_empty_stream():
    builder, stats = ingest_lines([])
    assert len(builder) == 0
    assert stats.events == 0
    assert stats.subjects == 0 and stats.objects == 0


def test_two_writes_collapse():
    builder, stats = ingest_lines(lines([
        ev("write", 5, "editor", "file", "/tmp/a", ts=10),
        ev("write", 5, "editor", "file", "/tmp/a", ts=20),
    ]))
    g = builder.freeze()
    assert stats.events == 2
    assert g.n_edges == 1
    edge = g.edge_view(0)
    assert (edge.count, edge.t_first, edge.t_last) == (2, 10, 20)


def test_three_event_trace_shape():
    # fork(launcher -> firefox); firefox writes tmp.doc; word execs tmp.doc.
    # word appears out of nowhere, so its lineage root is itself.
    builder, stats = ingest_lines(lines([
        ev("fork", 1, "launcher", "process", "firefox", opid=2, ts=1),
        ev("write", 2, "firefox", "file", "tmp.doc", ts=2),
        ev("exec", 3, "word", "file", "tmp.doc", ts=3),
    ]))
    g = builder.freeze()
    assert g.n_nodes == 4
    assert g.n_edges == 3
    assert stats.events == 3
    assert stats.subjects == 3 and stats.objects == 1
    launcher = g.lookup_exact("launcher")[0]
    word = [n for n in range(g.n_nodes)
            if g.is_process(n) and (g.attrs_of(n) or {}).get("pid") == "3"][0]
    assert g.root_of(word) == word
    assert g.root_of(word) != launcher


def test_exec_renames_to_image_stem():
    builder, _ = ingest_lines(lines([
        ev("fork", 1, "launcher", "process", "stage0", opid=2, ts=1),
        ev("exec", 2, "stage0", "file", "c:\\drop\\payload.exe", ts=2),
        ev("write", 2, "payload", "file", "/tmp/out", ts=3),
    ]))
    g = builder.freeze()
    proc = [n for n in g.lookup_exact("payload") if g.is_process(n)]
    assert len(proc) == 1
    # the rename kept the node: lineage still points at launcher
    assert g.label_of(g.root_of(proc[0])) == "launcher"
    assert g.n_nodes == 4  # launcher, stage0/payload, payload.exe, /tmp/out


def test_pid_incarnation_rules():
    ing = Ingestor()
    n1 = ing.pid_incarnation(7, 1, "app")
    assert ing.pid_incarnation(7, 2, "app") == n1  # stable between events
    n2 = ing.pid_incarnation(7, 3, "other")  # unannounced image change
    assert n2 != n1
    fresh = ing.pid_incarnation(99, 1, "thing")
    assert fresh not in (n1, n2)


def test_fork_reusing_pid_starts_new_incarnation():
    builder, _ = ingest_lines(lines([
        ev("fork", 1, "init", "process", "worker", opid=50, ts=1),
        ev("write", 50, "worker", "file", "/tmp/a", ts=2),
        ev("fork", 1, "init", "process", "worker", opid=50, ts=3),
        ev("write", 50, "worker", "file", "/tmp/b", ts=4),
    ]))
    g = builder.freeze()
    workers = [n for n in g.lookup_exact("worker") if g.is_process(n)]
    assert len(workers) == 2


def test_malformed_line_policies():
    bad = ["{not json", json.dumps(ev("write", 1, "a", "file", "f"))]
    with pytest.raises(IngestError) as err:
        ingest_lines(bad, on_error="abort")
    assert err.value.line_no == 1

    builder, stats = ingest_lines(bad, on_error="skip")
    assert stats.skipped == 1
    assert stats.events == 1

    with pytest.raises(IngestError):
        ingest_lines([json.dumps(ev("teleport", 1, "a", "file", "f"))])


def test_unknown_object_kind_maps_to_file():
    builder, stats = ingest_lines(lines([
        ev("write", 1, "app", "gizmo", "dev0"),
    ]))
    g = builder.freeze()
    assert stats.unknown_object_kinds == 1
    obj = g.lookup_exact("dev0")[0]
    assert g.kind_of(obj) == "file"


def test_stats_consistency(lab_graph):
    s = lab_graph.stats()
    assert s["subjects"] + s["objects"] == lab_graph.n_nodes
    assert s["events"] == int(lab_graph.e_cnt.sum())


def test_prefix_is_subgraph():
    from conftest import browser_lab_records

    recs = browser_lab_records()
    full, _ = ingest_lines(json.dumps(r) for r in recs)
    for cut in (0, 5, len(recs) // 2, len(recs) - 1):
        part, _ = ingest_lines(json.dumps(r) for r in recs[:cut])
        assert len(part) <= len(full)
        for nid in range(len(part)):
            assert part.nodes[nid].label == full.nodes[nid].label
            assert part.nodes[nid].kind == full.nodes[nid].kind
        assert set(part._edges) <= set(full._edges)


def test_gzip_input(tmp_path):
    path = tmp_path / "events.ndjson.gz"
    with gzip.open(path, "wt", encoding="utf-8") as fh:
        fh.write(json.dumps(ev("write", 1, "app", "file", "/tmp/z")) + "\n")
    builder, stats = ingest_path(path)
    assert stats.events == 1
    assert len(builder) == 2


def test_validation_messages():
    with pytest.raises(IngestError):
        AuditEvent.from_record({"ts": 1, "event": "write"}, 3)
    with pytest.raises(IngestError):
        AuditEvent.from_record(
            {"ts": 1, "event": "fork", "subject": {"pid": 1, "exe": "a"},
             "object": {"kind": "process", "name": "b"}}, 4)  # fork needs object.pid
    with pytest.raises(IngestError):
        AuditEvent.from_record(
            {"ts": 1, "event": "write", "subject": {"pid": 0, "exe": "a"},
             "object": {"kind": "file", "name": "b"}}, 5)
