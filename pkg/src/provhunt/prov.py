"""In-memory provenance graph: typed entities, collapsed flow edges, process forest.

The graph is assembled by a single-writer ``GraphBuilder`` and frozen into an
immutable ``ProvGraph`` before any search runs.  Edges point in the direction
of information flow / causality, not in syscall-caller direction.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

ENTITY_KINDS = ("process", "file", "socket", "registry", "pipe", "memory")
KIND_CODE = {k: i for i, k in enumerate(ENTITY_KINDS)}

EVENT_KINDS = (
    "read", "write", "exec", "fork", "clone", "connect", "send",
    "recv", "create", "delete", "rename", "setreg", "mmap",
)
EVENT_CODE = {e: i for i, e in enumerate(EVENT_KINDS)}

# Information-flow direction per event kind.  True: the edge runs from the
# acting (subject) process to the object; False: object -> subject process.
OBJECT_IS_SINK = {
    "read": False,
    "write": True,
    "exec": False,
    "fork": True,
    "clone": True,
    "connect": True,
    "send": True,
    "recv": False,
    "create": True,
    "delete": True,
    "rename": True,
    "setreg": True,
    "mmap": False,
}

LINEAGE_EVENTS = ("fork", "clone")

# Node-id budget for packed edge keys; graphs beyond this need a wider pack.
_MAX_NODES = 1 << 23

_DRIVE = re.compile(r"^[a-zA-Z]:[\\/]")
_BACK_RUN = re.compile(r"\\{2,}")
_FWD_RUN = re.compile(r"/{2,}")


class GraphBuildError(ValueError):
    """Raised for malformed graph construction requests."""


def canonical_label(raw: str) -> str:
    """Canonicalize an entity label.  Applied exactly once, at node creation.

    Windows-origin labels (drive prefix, backslashes, registry hives) are
    lower-cased and use ``\\`` separators; other labels keep their case.
    Separator runs and trailing separators are collapsed either way.
    """
    s = raw.strip()
    if not s:
        raise GraphBuildError("empty entity label")
    windowsy = bool(_DRIVE.match(s)) or "\\" in s or s.lower().startswith("[hk")
    if windowsy:
        s = s.replace("/", "\\")
        s = _BACK_RUN.sub(r"\\", s)
        if len(s) > 1:
            s = s.rstrip("\\") or "\\"
        s = s.lower()
    else:
        s = _FWD_RUN.sub("/", s)
        if len(s) > 1:
            s = s.rstrip("/") or "/"
    return s


def image_stem(label: str) -> str:
    """Process name for an executed image: basename minus its last extension."""
    base = re.split(r"[\\/]", label)[-1]
    if "." in base[1:]:
        base = base.rsplit(".", 1)[0]
    return base or label


@dataclass
class ProvNode:
    id: int
    kind: str
    label: str
    attrs: dict[str, str] | None = None


@dataclass(frozen=True)
class ProvEdge:
    src: int
    dst: int
    event: str
    t_first: int
    t_last: int
    count: int


class GraphBuilder:
    """Single-writer accumulator for nodes, collapsed edges, and lineage.

    Parallel events with the same (src, dst, event) triple collapse into one
    edge carrying a count and a [t_first, t_last] span.
    """

    def __init__(self):
        self.nodes: list[ProvNode] = []
        # packed (src, dst, event) -> [t_first, t_last, count]
        self._edges: dict[int, list[int]] = {}
        self.proc_parent: dict[int, int] = {}
        self._object_key: dict[tuple[str, str, str], int] = {}
        self.hosts: set[str] = set()

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self._edges)

    def add_node(self, kind: str, label: str, attrs: dict | None = None,
                 canonical: bool = False) -> int:
        if kind not in ENTITY_KINDS:
            raise GraphBuildError(f"unknown entity kind {kind!r}")
        if len(self.nodes) >= _MAX_NODES:
            raise GraphBuildError("node budget exceeded")
        lab = label if canonical else canonical_label(label)
        nid = len(self.nodes)
        self.nodes.append(ProvNode(nid, kind, lab, attrs))
        return nid

    def object_node(self, kind: str, label: str, host: str = "") -> int:
        """Node for a non-process entity, deduplicated per (host, kind, label)."""
        lab = canonical_label(label)
        key = (host, kind, lab)
        nid = self._object_key.get(key)
        if nid is None:
            attrs = {"host": host} if host else None
            nid = self.add_node(kind, lab, attrs, canonical=True)
            self._object_key[key] = nid
            if host:
                self.hosts.add(host)
        return nid

    def relabel_node(self, nid: int, label: str) -> None:
        # exec updates a process image; legal only pre-freeze
        self.nodes[nid].label = canonical_label(label)

    def add_edge(self, src: int, dst: int, event: str, ts: int,
                 t_last: int | None = None, count: int = 1) -> None:
        n = len(self.nodes)
        if not (0 <= src < n) or not (0 <= dst < n):
            raise GraphBuildError(
                f"edge ({src}, {dst}, {event}) references an unknown node")
        ev = EVENT_CODE.get(event)
        if ev is None:
            raise GraphBuildError(f"unknown event kind {event!r}")
        if self.nodes[src].kind != "process" and self.nodes[dst].kind != "process":
            raise GraphBuildError(
                f"edge ({src}, {dst}, {event}) has no process endpoint")
        if count < 1:
            raise GraphBuildError("edge count must be >= 1")
        tl = ts if t_last is None else t_last
        if tl < ts:
            raise GraphBuildError("t_last precedes t_first")
        key = ((src << 23) | dst) << 4 | ev
        slot = self._edges.get(key)
        if slot is None:
            self._edges[key] = [ts, tl, count]
        else:
            if ts < slot[0]:
                slot[0] = ts
            if tl > slot[1]:
                slot[1] = tl
            slot[2] += count

    def set_parent(self, child: int, parent: int) -> None:
        for nid in (child, parent):
            if not (0 <= nid < len(self.nodes)):
                raise GraphBuildError(f"unknown node id {nid}")
            if self.nodes[nid].kind != "process":
                raise GraphBuildError(f"node {nid} is not a process")
        prev = self.proc_parent.get(child)
        if prev is not None and prev != parent:
            raise GraphBuildError(f"process {child} already has a parent")
        # walking up from the parent must not reach the child (forest property)
        cur = parent
        while cur is not None:
            if cur == child:
                raise GraphBuildError("lineage cycle detected")
            cur = self.proc_parent.get(cur)
        self.proc_parent[child] = parent

    def freeze(self) -> "ProvGraph":
        return ProvGraph._from_builder(self)


def merge_builders(builders: list[GraphBuilder]) -> GraphBuilder:
    """Merge per-host builders into one, order-independently.

    Hosts must be pairwise disjoint; nodes are re-numbered canonically by
    (host group, original id) so the merged graph does not depend on the
    order in which the builders are supplied.
    """
    if not builders:
        return GraphBuilder()
    keyed = []
    seen_hosts: set[str] = set()
    for b in builders:
        hosts = b.hosts or {""}
        if hosts & seen_hosts:
            overlap = sorted(hosts & seen_hosts)
            raise GraphBuildError(f"builders share hosts: {overlap}")
        seen_hosts |= hosts
        keyed.append((min(hosts), b))
    keyed.sort(key=lambda kv: kv[0])

    merged = GraphBuilder()
    for _, b in keyed:
        offset = len(merged.nodes)
        for node in b.nodes:
            merged.add_node(node.kind, node.label, dict(node.attrs) if node.attrs else None,
                            canonical=True)
        for key, (tf, tl, cnt) in b._edges.items():
            ev = key & 0xF
            rest = key >> 4
            src, dst = rest >> 23, rest & (_MAX_NODES - 1)
            merged.add_edge(src + offset, dst + offset, EVENT_KINDS[ev], tf, tl, cnt)
        for child, parent in b.proc_parent.items():
            merged.set_parent(child + offset, parent + offset)
        merged.hosts |= b.hosts
    return merged


class ProvGraph:
    """Immutable provenance graph with CSR adjacency and label/kind indices.

    Safe to share across concurrent readers once constructed.
    """

    def __init__(self, kinds, labels, attrs, e_src, e_dst, e_ev, e_tf, e_tl,
                 e_cnt, parent, root, hosts=()):
        self._kinds = kinds
        self._labels = labels
        self._attrs = attrs
        self.e_src = e_src
        self.e_dst = e_dst
        self.e_ev = e_ev
        self.e_tf = e_tf
        self.e_tl = e_tl
        self.e_cnt = e_cnt
        self._parent = parent
        self._root = root
        self.hosts = tuple(sorted(hosts))
        self._build_indices()

    @classmethod
    def _from_builder(cls, b: GraphBuilder) -> "ProvGraph":
        n = len(b.nodes)
        kinds = np.fromiter((KIND_CODE[nd.kind] for nd in b.nodes), dtype=np.uint8, count=n)
        labels = [nd.label for nd in b.nodes]
        attrs = [nd.attrs for nd in b.nodes]

        m = len(b._edges)
        e_src = np.empty(m, dtype=np.int64)
        e_dst = np.empty(m, dtype=np.int64)
        e_ev = np.empty(m, dtype=np.uint8)
        e_tf = np.empty(m, dtype=np.int64)
        e_tl = np.empty(m, dtype=np.int64)
        e_cnt = np.empty(m, dtype=np.int64)
        for i, key in enumerate(sorted(b._edges)):
            tf, tl, cnt = b._edges[key]
            ev = key & 0xF
            rest = key >> 4
            e_src[i] = rest >> 23
            e_dst[i] = rest & (_MAX_NODES - 1)
            e_ev[i] = ev
            e_tf[i], e_tl[i], e_cnt[i] = tf, tl, cnt

        parent = np.full(n, -1, dtype=np.int64)
        for child, par in b.proc_parent.items():
            parent[child] = par
        root = np.full(n, -1, dtype=np.int64)
        for nid, nd in enumerate(b.nodes):
            if nd.kind != "process":
                continue
            chain = []
            cur = nid
            while root[cur] < 0 and parent[cur] >= 0:
                chain.append(cur)
                cur = parent[cur]
            top = root[cur] if root[cur] >= 0 else cur
            root[nid] = top
            for c in chain:
                root[c] = top

        return cls(kinds, labels, attrs, e_src, e_dst, e_ev, e_tf, e_tl,
                   e_cnt, parent, root, b.hosts)

    def _build_indices(self):
        n = self.n_nodes
        m = self.n_edges
        # edges arrive sorted by (src, dst, event); build both CSR views
        self._out_ptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(self._out_ptr, self.e_src + 1, 1)
        np.cumsum(self._out_ptr, out=self._out_ptr)
        self._in_order = np.lexsort((self.e_ev, self.e_src, self.e_dst)) if m else np.empty(0, dtype=np.int64)
        self._in_ptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(self._in_ptr, self.e_dst + 1, 1)
        np.cumsum(self._in_ptr, out=self._in_ptr)

        # unique-neighbor CSR (self-loops dropped): traversal working set
        self._succ, self._succ_ptr = self._unique_adj(self.e_src, self.e_dst, n)
        self._pred, self._pred_ptr = self._unique_adj(self.e_dst, self.e_src, n)

        self._name_index: dict[str, list[int]] = {}
        for nid, lab in enumerate(self._labels):
            self._name_index.setdefault(lab.lower(), []).append(nid)
        self._kind_index: dict[str, np.ndarray] = {}
        for kind, code in KIND_CODE.items():
            self._kind_index[kind] = np.nonzero(self._kinds == code)[0]

    @staticmethod
    def _unique_adj(a, b, n):
        if len(a) == 0:
            return np.empty(0, dtype=np.int64), np.zeros(n + 1, dtype=np.int64)
        keep = a != b
        pairs = np.unique(a[keep] * np.int64(_MAX_NODES) + b[keep])
        heads = pairs // _MAX_NODES
        tails = pairs % _MAX_NODES
        ptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(ptr, heads + 1, 1)
        np.cumsum(ptr, out=ptr)
        return tails, ptr

    # -- basic accessors -------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return len(self._labels)

    @property
    def n_edges(self) -> int:
        return len(self.e_src)

    def node(self, nid: int) -> ProvNode:
        self._check(nid)
        return ProvNode(nid, ENTITY_KINDS[self._kinds[nid]], self._labels[nid],
                        self._attrs[nid])

    def kind_of(self, nid: int) -> str:
        return ENTITY_KINDS[self._kinds[nid]]

    def label_of(self, nid: int) -> str:
        return self._labels[nid]

    def attrs_of(self, nid: int) -> dict | None:
        return self._attrs[nid]

    def is_process(self, nid: int) -> bool:
        return self._kinds[nid] == KIND_CODE["process"]

    def root_of(self, nid: int) -> int:
        """Ancestry root for a process node, -1 for any other kind."""
        return int(self._root[nid])

    def parent_of(self, nid: int) -> int:
        return int(self._parent[nid])

    def _check(self, nid):
        if not (0 <= nid < self.n_nodes):
            raise KeyError(f"unknown node id {nid}")

    # -- adjacency -------------------------------------------------------

    def edge_view(self, i: int) -> ProvEdge:
        return ProvEdge(int(self.e_src[i]), int(self.e_dst[i]),
                        EVENT_KINDS[self.e_ev[i]], int(self.e_tf[i]),
                        int(self.e_tl[i]), int(self.e_cnt[i]))

    def neighbors(self, nid: int, direction: str = "forward") -> Iterator[tuple[ProvEdge, int]]:
        """Adjacent (edge, node) pairs, ascending by neighbor id then event kind."""
        self._check(nid)
        if direction == "forward":
            for i in range(self._out_ptr[nid], self._out_ptr[nid + 1]):
                yield self.edge_view(i), int(self.e_dst[i])
        elif direction == "backward":
            for j in range(self._in_ptr[nid], self._in_ptr[nid + 1]):
                i = int(self._in_order[j])
                yield self.edge_view(i), int(self.e_src[i])
        else:
            raise ValueError(f"unknown direction {direction!r}")

    def flow_neighbors(self, nid: int, forward: bool) -> np.ndarray:
        """Unique neighbor ids in one direction, self-loops excluded."""
        if forward:
            return self._succ[self._succ_ptr[nid]:self._succ_ptr[nid + 1]]
        return self._pred[self._pred_ptr[nid]:self._pred_ptr[nid + 1]]

    def neighbor_ids(self, nid: int) -> np.ndarray:
        """Unique neighbors in either direction (self excluded)."""
        both = np.concatenate([self.flow_neighbors(nid, True),
                               self.flow_neighbors(nid, False)])
        return np.unique(both)

    def has_edge(self, src: int, dst: int) -> bool:
        lo, hi = self._out_ptr[src], self._out_ptr[src + 1]
        return bool(np.any(self.e_dst[lo:hi] == dst))

    def edges_between(self, src: int, dst: int) -> list[ProvEdge]:
        lo, hi = int(self._out_ptr[src]), int(self._out_ptr[src + 1])
        return [self.edge_view(i) for i in range(lo, hi) if self.e_dst[i] == dst]

    # -- lookup ----------------------------------------------------------

    def nodes_of_kind(self, kind: str) -> np.ndarray:
        if kind not in ENTITY_KINDS:
            raise KeyError(f"unknown entity kind {kind!r}")
        return self._kind_index[kind]

    def lookup_exact(self, label: str) -> list[int]:
        return list(self._name_index.get(label.lower(), ()))

    def lookup_by_label(self, pattern, aliases=None) -> list[int]:
        """All node ids whose canonical label matches ``pattern`` (ascending).

        Pattern semantics (globs, ``%alias%`` expansion, ``re:`` regexes) are
        defined by the query model.
        """
        from . import query as _query

        compiled = pattern if isinstance(pattern, _query.CompiledPattern) \
            else _query.compile_pattern(pattern, aliases)
        if compiled.exact is not None:
            return self.lookup_exact(compiled.exact)
        return [nid for nid, lab in enumerate(self._labels) if compiled.matches(lab)]

    def stats(self) -> dict:
        subjects = int(np.count_nonzero(self._kinds == KIND_CODE["process"]))
        return {
            "subjects": subjects,
            "objects": self.n_nodes - subjects,
            "edges": self.n_edges,
            "events": int(self.e_cnt.sum()) if self.n_edges else 0,
        }
