"""Versioned binary container for frozen provenance graphs.

Layout: magic, format version, section table (name, offset, length, sha256),
then zlib-compressed section payloads.  Node metadata travels as JSON, edge
and lineage columns as little-endian arrays.  Checksums are verified on load;
a version mismatch is a hard error.
"""

from __future__ import annotations

import hashlib
import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .prov import ProvGraph

MAGIC = b"PVHSNAP1"
SNAPSHOT_VERSION = 1

_HEADER = struct.Struct("<8sHH")          # magic, version, n_sections
_SECTION = struct.Struct("<8sQQ32s")      # name, offset, length, sha256

_EDGE_COLS = (
    ("e_src", "<i8"), ("e_dst", "<i8"), ("e_ev", "u1"),
    ("e_tf", "<i8"), ("e_tl", "<i8"), ("e_cnt", "<i8"),
)


class SnapshotError(ValueError):
    pass


def _pack_sections(sections: list[tuple[str, bytes]]) -> bytes:
    head_len = _HEADER.size + _SECTION.size * len(sections)
    table = b""
    payloads = b""
    offset = head_len
    for name, payload in sections:
        digest = hashlib.sha256(payload).digest()
        table += _SECTION.pack(name.encode("ascii").ljust(8, b"\0"),
                               offset, len(payload), digest)
        payloads += payload
        offset += len(payload)
    return _HEADER.pack(MAGIC, SNAPSHOT_VERSION, len(sections)) + table + payloads


def save_snapshot(graph: ProvGraph, path, stats: dict | None = None) -> str:
    """Serialize a frozen graph; returns the file's sha256 hex digest."""
    meta = {
        "n_nodes": graph.n_nodes,
        "n_edges": graph.n_edges,
        "hosts": list(graph.hosts),
        "stats": stats or graph.stats(),
        "edge_cols": [[n, d] for n, d in _EDGE_COLS],
    }
    nodes = {
        "kinds": graph._kinds.tolist(),
        "labels": graph._labels,
        "attrs": graph._attrs,
    }
    edge_blob = b"".join(
        np.ascontiguousarray(getattr(graph, col)).astype(dtype).tobytes()
        for col, dtype in _EDGE_COLS)
    lineage_blob = (graph._parent.astype("<i8").tobytes()
                    + graph._root.astype("<i8").tobytes())

    sections = [
        ("meta", zlib.compress(json.dumps(meta, sort_keys=True).encode(), 6)),
        ("nodes", zlib.compress(json.dumps(nodes, sort_keys=True).encode(), 6)),
        ("edges", zlib.compress(edge_blob, 6)),
        ("lineage", zlib.compress(lineage_blob, 6)),
    ]
    blob = _pack_sections(sections)
    Path(path).write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


def _read_sections(blob: bytes) -> dict[str, bytes]:
    if len(blob) < _HEADER.size:
        raise SnapshotError("truncated snapshot")
    magic, version, n_sections = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise SnapshotError("not a provhunt snapshot (bad magic)")
    if version != SNAPSHOT_VERSION:
        raise SnapshotError(
            f"incompatible snapshot version {version} (expected {SNAPSHOT_VERSION})")
    sections = {}
    for i in range(n_sections):
        name, offset, length, digest = _SECTION.unpack_from(
            blob, _HEADER.size + i * _SECTION.size)
        payload = blob[offset:offset + length]
        if hashlib.sha256(payload).digest() != digest:
            raise SnapshotError(f"checksum mismatch in section {name!r}")
        sections[name.rstrip(b"\0").decode("ascii")] = payload
    return sections


def load_snapshot(path) -> ProvGraph:
    blob = Path(path).read_bytes()
    sections = _read_sections(blob)
    try:
        meta = json.loads(zlib.decompress(sections["meta"]))
        nodes = json.loads(zlib.decompress(sections["nodes"]))
        edge_blob = zlib.decompress(sections["edges"])
        lineage_blob = zlib.decompress(sections["lineage"])
    except (KeyError, zlib.error) as exc:
        raise SnapshotError(f"corrupt snapshot: {exc}") from exc

    n, m = meta["n_nodes"], meta["n_edges"]
    cols = {}
    off = 0
    for col, dtype in _EDGE_COLS:
        width = np.dtype(dtype).itemsize
        cols[col] = np.frombuffer(edge_blob, dtype=dtype, count=m, offset=off).copy()
        off += m * width
    parent = np.frombuffer(lineage_blob, dtype="<i8", count=n).copy()
    root = np.frombuffer(lineage_blob, dtype="<i8", count=n, offset=n * 8).copy()

    kinds = np.asarray(nodes["kinds"], dtype=np.uint8)
    return ProvGraph(kinds, nodes["labels"], nodes["attrs"],
                     cols["e_src"].astype(np.int64), cols["e_dst"].astype(np.int64),
                     cols["e_ev"].astype(np.uint8), cols["e_tf"].astype(np.int64),
                     cols["e_tl"].astype(np.int64), cols["e_cnt"].astype(np.int64),
                     parent.astype(np.int64), root.astype(np.int64),
                     meta.get("hosts", ()))
