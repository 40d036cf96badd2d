"""Shared fixtures: the two-browser lab graph and small builder helpers.

The lab graph models two browser processes under one launcher, a second and
third launcher tree (word processors), and a spooler service tree:

  launcher1 forks firefox1, firefox2; firefox2 forks java1 forks java2;
  java2 writes the firefox registry key (1-root flow).
  firefox2 drops tmp.doc, read by word1 (under launcher2), which writes the
  same registry key (2-root flow) plus its own key.
  word2 (under launcher3) reads the firefox registry key.
  firefox1 drops cmd.exe / tmp.exe / word.exe and both browsers write a spool
  file read by spoolsv3 (services tree), which writes a registry key and
  receives from the external address 240.2.1.1.
"""

from __future__ import annotations

import json

import pytest

from provhunt.ingest import ingest_lines
from provhunt.query import parse_query


def browser_lab_records(java_path: bool = True) -> list[dict]:
    records = []

    def emit(event, spid, sexe, okind, oname, opid=None):
        obj = {"kind": okind, "name": oname}
        if opid is not None:
            obj["pid"] = opid
        records.append({
            "ts": 1_000_000_000 + len(records) * 1_000_000,
            "event": event,
            "subject": {"pid": spid, "exe": sexe},
            "object": obj,
        })

    emit("fork", 100, "launcher", "process", "firefox", 101)
    emit("fork", 100, "launcher", "process", "firefox", 102)
    if java_path:
        emit("fork", 102, "firefox", "process", "java", 103)
        emit("fork", 103, "java", "process", "java", 104)
    emit("fork", 200, "launcher", "process", "word", 201)
    emit("fork", 300, "launcher", "process", "word", 301)
    emit("fork", 400, "services", "process", "spoolsv", 401)
    emit("fork", 400, "services", "process", "spoolsv", 402)
    emit("fork", 400, "services", "process", "spoolsv", 403)
    if java_path:
        emit("setreg", 104, "java", "registry", "hkcu\\software\\firefox")
    emit("write", 102, "firefox", "file", "tmp.doc")
    emit("read", 201, "word", "file", "tmp.doc")
    emit("setreg", 201, "word", "registry", "hkcu\\software\\firefox")
    emit("setreg", 201, "word", "registry", "hkcu\\software\\word")
    emit("read", 301, "word", "registry", "hkcu\\software\\firefox")
    emit("write", 101, "firefox", "file", "cmd.exe")
    emit("write", 101, "firefox", "file", "tmp.exe")
    emit("write", 101, "firefox", "file", "word.exe")
    emit("write", 101, "firefox", "file", "fspool")
    emit("write", 102, "firefox", "file", "fspool")
    emit("read", 403, "spoolsv", "file", "fspool")
    emit("setreg", 403, "spoolsv", "registry", "hkcu\\software\\spoolsv")
    emit("connect", 101, "firefox", "socket", "240.1.1.1:443")
    emit("connect", 101, "firefox", "socket", "240.1.1.2:443")
    emit("connect", 102, "firefox", "socket", "240.1.1.3:443")
    emit("recv", 403, "spoolsv", "socket", "240.2.1.1:443")
    return records


def build_graph(records):
    builder, _ = ingest_lines(json.dumps(r) for r in records)
    return builder.freeze()


def node_by(graph, label, pid=None):
    ids = graph.lookup_exact(label)
    if pid is not None:
        ids = [n for n in ids if (graph.attrs_of(n) or {}).get("pid") == str(pid)]
    assert len(ids) == 1, f"label {label!r} pid={pid} resolved to {ids}"
    return ids[0]


BROWSER_LAB_QUERY = {
    "name": "browser-lab",
    "nodes": [
        {"qid": "A", "kind": "file", "pattern": "*.%exe%"},
        {"qid": "B", "kind": "process", "pattern": "%browser%"},
        {"qid": "C", "kind": "process", "pattern": "spoolsv"},
        {"qid": "D", "kind": "registry", "pattern": "%registry%"},
        {"qid": "E", "kind": "socket", "pattern": "%External IP address%"},
    ],
    "edges": [
        {"src": "B", "dst": "A", "ord": 1},
        {"src": "B", "dst": "D", "ord": 2},
        {"src": "B", "dst": "C", "ord": 3},
        {"src": "E", "dst": "C", "ord": 4},
    ],
}


@pytest.fixture(scope="session")
def lab_graph():
    return build_graph(browser_lab_records())


@pytest.fixture(scope="session")
def lab_graph_no_java():
    return build_graph(browser_lab_records(java_path=False))


@pytest.fixture(scope="session")
def lab_query():
    return parse_query(BROWSER_LAB_QUERY)


@pytest.fixture()
def lab_nodes(lab_graph):
    g = lab_graph
    return {
        "launcher1": node_by(g, "launcher", 100),
        "firefox1": node_by(g, "firefox", 101),
        "firefox2": node_by(g, "firefox", 102),
        "java1": node_by(g, "java", 103),
        "java2": node_by(g, "java", 104),
        "launcher2": node_by(g, "launcher", 200),
        "word1": node_by(g, "word", 201),
        "launcher3": node_by(g, "launcher", 300),
        "word2": node_by(g, "word", 301),
        "services": node_by(g, "services", 400),
        "spoolsv1": node_by(g, "spoolsv", 401),
        "spoolsv2": node_by(g, "spoolsv", 402),
        "spoolsv3": node_by(g, "spoolsv", 403),
        "reg_firefox": node_by(g, "hkcu\\software\\firefox"),
        "reg_word": node_by(g, "hkcu\\software\\word"),
        "reg_spoolsv": node_by(g, "hkcu\\software\\spoolsv"),
        "tmp_doc": node_by(g, "tmp.doc"),
        "cmd_exe": node_by(g, "cmd.exe"),
        "tmp_exe": node_by(g, "tmp.exe"),
        "word_exe": node_by(g, "word.exe"),
        "fspool": node_by(g, "fspool"),
        "ip1": node_by(g, "240.1.1.1:443"),
        "ip2": node_by(g, "240.1.1.2:443"),
        "ip3": node_by(g, "240.1.1.3:443"),
        "ip4": node_by(g, "240.2.1.1:443"),
    }
