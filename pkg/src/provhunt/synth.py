"""Synthetic audit scenarios: benign background with optionally planted attacks.

The benign background is a forest of process trees doing random reads, writes,
registry edits, and network traffic, with a configurable fraction of labels
that collide with query patterns.  A plant realizes every edge of a query
graph with concrete labels instantiated from the node patterns, spending
exactly the requested number of independent ancestry roots, and can splice
fork chains into its flows without changing their compromise cost.

Separate RNG streams keep the benign background byte-identical across plant
and noise settings, which is what the evasion-invariance checks rely on.
"""

from __future__ import annotations

import heapq
import json
import random
import string
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .prov import (
    LINEAGE_EVENTS,
    OBJECT_IS_SINK,
    GraphBuilder,
    canonical_label,
    image_stem,
)
from .query import (
    AliasTable,
    QueryGraph,
    default_aliases,
    load_builtin_query,
    load_query_file,
    parse_query,
)

_T0 = 1_700_000_000_000_000_000  # ns epoch base for synthetic timelines
_STEP = 1_000_000
_ALNUM = string.ascii_lowercase + string.digits


class GenerationError(ValueError):
    pass


# -- label instantiation ----------------------------------------------------

def _pick_alias_expansions(source: str, aliases: AliasTable, rng: random.Random) -> str:
    import re as _re

    m = _re.search(r"%([^%]+)%", source)
    if m is None:
        return source
    entry = aliases.get(m.group(1))
    if entry.predicate is not None:
        raise GenerationError(
            f"predicate alias %{m.group(1)}% cannot be instantiated inside {source!r}")
    expansion = rng.choice(sorted(entry.globs))
    return _pick_alias_expansions(source[:m.start()] + expansion + source[m.end():],
                                  aliases, rng)


def _token(rng: random.Random) -> str:
    return "".join(rng.choice(_ALNUM) for _ in range(rng.randint(4, 10)))


def _class_choices(body: str) -> str:
    if body.startswith("^"):
        return "x"
    out = []
    i = 0
    while i < len(body):
        if i + 2 < len(body) and body[i + 1] == "-":
            lo, hi = body[i], body[i + 2]
            out.extend(chr(c) for c in range(ord(lo), ord(hi) + 1))
            i += 3
        else:
            out.append(body[i])
            i += 1
    return "".join(out) or "x"


def _instantiate_glob(glob: str, rng: random.Random) -> str:
    # split top-level alternation first
    parts = []
    depth = 0
    start = 0
    for i, c in enumerate(glob):
        if c == "(":
            depth += 1
        elif c == ")":
            depth -= 1
        elif c == "|" and depth == 0:
            parts.append(glob[start:i])
            start = i + 1
    parts.append(glob[start:])
    if len(parts) > 1:
        return _instantiate_glob(rng.choice(parts), rng)

    out = []
    i = 0
    while i < len(glob):
        c = glob[i]
        if c == "*":
            out.append(_token(rng))
        elif c == "?":
            out.append(rng.choice(_ALNUM))
        elif c == "(":
            depth = 1
            j = i + 1
            while j < len(glob) and depth:
                if glob[j] == "(":
                    depth += 1
                elif glob[j] == ")":
                    depth -= 1
                j += 1
            out.append(_instantiate_glob(glob[i + 1:j - 1], rng))
            i = j - 1
        elif c == "[":
            j = glob.find("]", i + 1)
            body = glob[i + 1:j] if j > i + 1 else None
            if body is not None and (len(body) == 1 or "-" in body or body.startswith("^")):
                out.append(rng.choice(_class_choices(body)))
                i = j
            else:
                out.append(c)
        else:
            out.append(c)
        i += 1
    return "".join(out)


def external_ip_label(rng: random.Random) -> str:
    return f"203.0.113.{rng.randint(1, 254)}:{rng.randint(1024, 65000)}"


def instantiate_label(pattern: str, aliases: AliasTable, rng: random.Random) -> str:
    """A concrete label matching ``pattern`` (aliases picked at random)."""
    import re as _re

    whole = _re.fullmatch(r"%([^%]+)%", pattern)
    if whole is not None and aliases.get(whole.group(1)).predicate == "external_ip":
        return external_ip_label(rng)
    return _instantiate_glob(_pick_alias_expansions(pattern, aliases, rng), rng)


def max_root_budget(q: QueryGraph) -> int:
    """Largest satisfiable plant budget: every process node forked by another
    query process shares its parent's tree, so only independently spawned
    process nodes can occupy distinct roots."""
    forked = set()
    for e in q.edges:
        if q.nodes[e.src].kinds[0] == "process" \
                and q.nodes[e.dst].kinds[0] == "process":
            event = e.event or "fork"
            if event in LINEAGE_EVENTS:
                forked.add(e.dst)
    heads = [qid for qid, node in q.nodes.items()
             if node.kinds[0] == "process" and qid not in forked]
    return len(heads)


def collision_labels_for(queries, seed: int = 0) -> list[tuple[str, str]]:
    """(kind, label) pairs instantiated from query patterns, for benign reuse."""
    rng = random.Random(f"{seed}:collisions")
    out = []
    for q in queries:
        for node in q.nodes.values():
            kind = node.kinds[0]
            try:
                label = instantiate_label(node.pattern, q.aliases, rng)
            except GenerationError:
                label = external_ip_label(rng)
            out.append((kind, label))
    return out


# -- scenario specs ----------------------------------------------------------

@dataclass
class BenignSpec:
    n_processes: int = 200
    n_files: int = 400
    n_sockets: int = 40
    n_roots: int = 20
    edge_density: float = 3.0
    rng_seed: int = 0
    collision_labels: tuple = ()
    collision_prob: float = 0.0

    def __post_init__(self):
        if self.n_roots < 1 or self.n_processes < self.n_roots:
            raise GenerationError("need 1 <= n_roots <= n_processes")
        if not (0.0 <= self.collision_prob <= 1.0):
            raise GenerationError("collision_prob must lie in [0, 1]")


@dataclass
class PlantSpec:
    query: QueryGraph
    root_budget: int = 1
    name_noise: float = 0.0
    chain_noise: int = 0

    def __post_init__(self):
        if self.root_budget < 1:
            raise GenerationError("root_budget must be >= 1")
        if not (0.0 <= self.name_noise <= 1.0):
            raise GenerationError("name_noise must lie in [0, 1]")
        if self.chain_noise < 0:
            raise GenerationError("chain_noise must be >= 0")


@dataclass
class ScenarioSpec:
    benign: BenignSpec
    plant: PlantSpec | None = None


@dataclass
class GroundTruth:
    assignment: dict[str, dict]
    flow_paths: list[dict]
    min_score: Fraction | None

    def resolve(self, graph) -> dict[str, int | None]:
        """Map each planted qid to its node id in an ingested graph."""
        resolved: dict[str, int | None] = {}
        for qid, want in self.assignment.items():
            ids = [n for n in graph.lookup_exact(want["label"])
                   if graph.kind_of(n) == want["kind"]]
            if "pid" in want and len(ids) > 1:
                ids = [n for n in ids
                       if (graph.attrs_of(n) or {}).get("pid") == want["pid"]]
            resolved[qid] = ids[0] if len(ids) >= 1 else None
        return resolved

    def as_dict(self) -> dict:
        return {
            "assignment": self.assignment,
            "flow_paths": self.flow_paths,
            "min_score": str(self.min_score) if self.min_score is not None else None,
        }


def load_spec(doc) -> ScenarioSpec:
    """Build a ScenarioSpec from a JSON document (dict or path)."""
    if isinstance(doc, (str, Path)):
        doc = json.loads(Path(doc).read_text("utf-8"))
    benign_raw = dict(doc.get("benign", {}))
    benign_raw["collision_labels"] = tuple(
        (k, v) for k, v in benign_raw.get("collision_labels", ()))
    benign = BenignSpec(**benign_raw)
    plant = None
    if doc.get("plant"):
        p = dict(doc["plant"])
        qref = p.pop("query")
        if isinstance(qref, dict):
            query = parse_query(qref)
        elif isinstance(qref, str) and qref.endswith(".json"):
            query = load_query_file(qref)
        else:
            query = load_builtin_query(qref)
        plant = PlantSpec(query=query, **p)
    return ScenarioSpec(benign, plant)


# -- benign background -------------------------------------------------------

_PROC_POOL = (
    "systemd", "bash", "sshd", "cron", "python3", "updater", "backupd",
    "indexer", "explorer", "notepad", "printd", "mailer",
)

_OPS = ("write", "write", "read", "read", "setreg", "connect", "recv")


def _benign_events(spec: BenignSpec):
    rng = random.Random(f"{spec.rng_seed}:benign")
    coll_by_kind: dict[str, list[str]] = {}
    for kind, label in spec.collision_labels:
        coll_by_kind.setdefault(kind, []).append(label)

    def maybe_collide(kind: str, label: str) -> str:
        pool = coll_by_kind.get(kind)
        if pool and rng.random() < spec.collision_prob:
            return rng.choice(pool)
        return label

    files = [maybe_collide("file", rng.choice((
        f"/home/user{rng.randint(0, 9)}/doc{i}.dat",
        f"/var/log/svc{i}.log",
        f"c:\\users\\u{rng.randint(0, 9)}\\documents\\file{i}.dat",
    ))) for i in range(spec.n_files)]
    regs = [maybe_collide("registry", f"hkcu\\software\\app{i}")
            for i in range(max(1, spec.n_files // 10))]
    sockets = []
    for i in range(spec.n_sockets):
        if rng.random() < 0.15:
            label = f"198.51.100.{rng.randint(1, 254)}:{rng.randint(1024, 65000)}"
        else:
            label = f"10.0.{rng.randint(0, 255)}.{rng.randint(1, 254)}:{rng.randint(1024, 65000)}"
        sockets.append(maybe_collide("socket", label))

    procs: list[tuple[int, str]] = []
    for i in range(spec.n_roots):
        exe = maybe_collide("process", rng.choice(_PROC_POOL))
        procs.append((1000 + i, exe))

    n_forks = spec.n_processes - spec.n_roots
    n_ops = int(spec.edge_density * spec.n_processes)
    total = n_forks + n_ops
    forks_left = n_forks
    ts = _T0

    for step in range(total):
        remaining = total - step
        do_fork = forks_left > 0 and rng.random() < forks_left / remaining
        if do_fork:
            parent = procs[rng.randint(0, len(procs) - 1)]
            pid = 1000 + len(procs)
            exe = maybe_collide("process", rng.choice(_PROC_POOL))
            procs.append((pid, exe))
            yield {"ts": ts, "event": rng.choice(LINEAGE_EVENTS),
                   "subject": {"pid": parent[0], "exe": parent[1]},
                   "object": {"kind": "process", "name": exe, "pid": pid}}
            forks_left -= 1
        else:
            subj = procs[rng.randint(0, len(procs) - 1)]
            op = rng.choice(_OPS)
            if op == "setreg":
                obj = {"kind": "registry", "name": rng.choice(regs)}
            elif op in ("connect", "recv"):
                obj = {"kind": "socket", "name": rng.choice(sockets)}
            else:
                obj = {"kind": "file", "name": rng.choice(files)}
            yield {"ts": ts, "event": op,
                   "subject": {"pid": subj[0], "exe": subj[1]}, "object": obj}
        ts += _STEP


def _benign_count(spec: BenignSpec) -> int:
    return (spec.n_processes - spec.n_roots) + int(spec.edge_density * spec.n_processes)


# -- plant --------------------------------------------------------------------

_DEFAULT_EVENT = {
    ("process", "process"): "fork",
    ("process", "file"): "write",
    ("file", "process"): "read",
    ("process", "socket"): "connect",
    ("socket", "process"): "recv",
    ("process", "registry"): "setreg",
    ("registry", "process"): "read",
    ("process", "pipe"): "write",
    ("pipe", "process"): "read",
    ("process", "memory"): "write",
    ("memory", "process"): "mmap",
}


def _edge_event(event: str | None, src_kind: str, dst_kind: str) -> str:
    default = _DEFAULT_EVENT.get((src_kind, dst_kind))
    if default is None:
        raise GenerationError(
            f"no single event realizes a {src_kind} -> {dst_kind} flow edge")
    if event is None:
        return default
    # honor the annotation when its flow direction fits, else fall back
    if event in LINEAGE_EVENTS:
        return event if (src_kind, dst_kind) == ("process", "process") else default
    if OBJECT_IS_SINK[event]:
        return event if src_kind == "process" else default
    return event if dst_kind == "process" else default


class _Plant:
    def __init__(self, spec: PlantSpec, seed: int):
        self.spec = spec
        self.q = spec.query
        self.rng = random.Random(f"{seed}:plant")
        self.rng_noise = random.Random(f"{seed}:plant-noise")
        self.rng_chain = random.Random(f"{seed}:plant-chain")
        self.events: list[dict] = []
        self.flow_paths: list[dict] = []
        self.next_pid = 910_000
        self.next_chain_pid = 950_000

    def _mutate(self, label: str) -> str:
        pos = self.rng_noise.randint(0, len(label))
        junk = "".join(self.rng_noise.choice(_ALNUM) for _ in range(3))
        return label[:pos] + junk + label[pos:]

    def build(self) -> GroundTruth:
        q, spec = self.q, self.spec
        kinds = {qid: node.kinds[0] for qid, node in q.nodes.items()}
        labels: dict[str, str] = {}
        for qid, node in q.nodes.items():
            label = instantiate_label(node.pattern, q.aliases, self.rng)
            if spec.name_noise and self.rng_noise.random() < spec.name_noise:
                label = self._mutate(label)
            labels[qid] = label

        ordered = sorted(
            enumerate(q.edges),
            key=lambda ie: (ie[1].ord if ie[1].ord is not None else 10_000 + ie[0]))
        events_for = {
            idx: _edge_event(e.event, kinds[e.src], kinds[e.dst])
            for idx, e in ordered
        }
        fork_parent: dict[str, tuple[int, object]] = {}
        for idx, e in ordered:
            if events_for[idx] in LINEAGE_EVENTS and e.dst not in fork_parent:
                fork_parent[e.dst] = (idx, e)

        heads = [qid for qid, k in kinds.items()
                 if k == "process" and qid not in fork_parent]
        if len(heads) < spec.root_budget:
            raise GenerationError(
                f"root_budget={spec.root_budget} but only {len(heads)} "
                "independently spawned process nodes are available")

        roots = [(900_000 + r, f"session{r}") for r in range(spec.root_budget)]
        head_root = {h: roots[i % spec.root_budget] for i, h in enumerate(heads)}

        pids: dict[str, int] = {}
        exe: dict[str, str] = {}
        alive: set[str] = set()
        realized: set[int] = set()

        def emit(event, spid, sexe, okind, oname, opid=None):
            obj = {"kind": okind, "name": oname}
            if opid is not None:
                obj["pid"] = opid
            self.events.append({"ts": 0, "event": event,
                                "subject": {"pid": spid, "exe": sexe},
                                "object": obj})

        def ensure_alive(qid: str, stack=()):
            if qid in alive:
                return
            if qid in stack:
                raise GenerationError(f"cyclic spawn chain through {qid!r}")
            if qid in fork_parent:
                idx, e = fork_parent[qid]
                realize(idx, e, stack + (qid,))
            else:
                root_pid, root_exe = head_root[qid]
                pids[qid] = self.next_pid
                self.next_pid += 1
                exe[qid] = labels[qid]
                emit("fork", root_pid, root_exe, "process", labels[qid], pids[qid])
                alive.add(qid)
                self.flow_paths.append({"src": None, "dst": qid, "event": "fork",
                                        "labels": [root_exe, labels[qid]]})

        def splice_chain(src_qid: str) -> tuple[int, str]:
            # evasion noise: new processes forked under the source's own root
            length = self.rng_chain.randint(1, self.spec.chain_noise)
            cur_pid, cur_exe = pids[src_qid], exe[src_qid]
            for _ in range(length):
                pid = self.next_chain_pid
                self.next_chain_pid += 1
                name = f"zz-noise{pid}"
                emit("fork", cur_pid, cur_exe, "process", name, pid)
                cur_pid, cur_exe = pid, name
            return cur_pid, cur_exe

        def realize(idx: int, e, stack=()):
            if idx in realized:
                return
            realized.add(idx)
            event = events_for[idx]
            src_kind, dst_kind = kinds[e.src], kinds[e.dst]
            if event in LINEAGE_EVENTS:
                ensure_alive(e.src, stack)
                pids[e.dst] = self.next_pid
                self.next_pid += 1
                exe[e.dst] = labels[e.dst]
                emit(event, pids[e.src], exe[e.src], "process", labels[e.dst],
                     pids[e.dst])
                alive.add(e.dst)
                path = [labels[e.src], labels[e.dst]]
            elif OBJECT_IS_SINK[event]:
                ensure_alive(e.src, stack)
                spid, sexe = pids[e.src], exe[e.src]
                path = [labels[e.src]]
                if self.spec.chain_noise:
                    spid, sexe = splice_chain(e.src)
                    path.append(sexe)
                emit(event, spid, sexe, dst_kind, labels[e.dst])
                path.append(labels[e.dst])
            else:
                ensure_alive(e.dst, stack)
                emit(event, pids[e.dst], exe[e.dst], src_kind, labels[e.src])
                if event == "exec":
                    # ingest renames the process to the executed image's stem
                    stem = canonical_label(image_stem(canonical_label(labels[e.src])))
                    labels[e.dst] = stem
                    exe[e.dst] = stem
                path = [labels[e.src], labels[e.dst]]
            self.flow_paths.append({"src": e.src, "dst": e.dst,
                                    "event": event, "labels": path})

        for idx, e in ordered:
            realize(idx, e)

        assignment = {}
        for qid in q.nodes:
            # ingest canonicalizes labels; ground truth must match that form
            entry = {"kind": kinds[qid], "label": canonical_label(labels[qid])}
            if qid in pids:
                entry["pid"] = str(pids[qid])
            assignment[qid] = entry
        return GroundTruth(assignment, self.flow_paths,
                           Fraction(1, spec.root_budget))


# -- scenario assembly --------------------------------------------------------

def _plant_events(spec: ScenarioSpec) -> tuple[list[dict], GroundTruth | None]:
    if spec.plant is None:
        return [], None
    plant = _Plant(spec.plant, spec.benign.rng_seed)
    truth = plant.build()
    start = _T0 + (_benign_count(spec.benign) // 2) * _STEP + _STEP // 2
    for i, ev in enumerate(plant.events):
        ev["ts"] = start + i * _STEP
    return plant.events, truth


def iter_events(spec: ScenarioSpec):
    """Deterministic merged event stream (benign interleaved with any plant)."""
    plant_events, _ = _plant_events(spec)
    yield from heapq.merge(_benign_events(spec.benign), iter(plant_events),
                           key=lambda e: e["ts"])


def generate(spec: ScenarioSpec) -> tuple[list[dict], GroundTruth]:
    """Materialize the event stream plus ground truth for the plant (if any)."""
    plant_events, truth = _plant_events(spec)
    events = list(heapq.merge(_benign_events(spec.benign), iter(plant_events),
                              key=lambda e: e["ts"]))
    if truth is None:
        truth = GroundTruth({}, [], None)
    return events, truth


def event_line(ev: dict) -> str:
    return json.dumps(ev, sort_keys=True, separators=(",", ":"))


def iter_event_lines(spec: ScenarioSpec):
    for ev in iter_events(spec):
        yield event_line(ev)


def ingest_scenario(spec: ScenarioSpec):
    """Generate, ingest, and freeze a scenario in one go (no disk round-trip)."""
    from .ingest import ingest_lines

    builder, stats = ingest_lines(iter_event_lines(spec))
    return builder.freeze(), stats


# -- random graphs and instances for oracle comparisons -----------------------

_OBJ_EVENTS = {
    "file": (("write", True), ("create", True), ("delete", True),
             ("read", False), ("exec", False), ("mmap", False)),
    "socket": (("connect", True), ("send", True), ("recv", False)),
    "registry": (("setreg", True), ("read", False)),
    "pipe": (("write", True), ("read", False)),
    "memory": (("write", True), ("mmap", False)),
}


def random_provenance_graph(rng: random.Random, n_min: int = 4, n_max: int = 12,
                            density: float = 2.0):
    """Small random graph with a random process forest and event-valid edges;
    cycles are possible.  Used for oracle-equivalence checks."""
    n = rng.randint(n_min, n_max)
    n_proc = rng.randint(1, max(1, (2 * n) // 3))
    b = GraphBuilder()
    ts = _T0
    procs: list[int] = []
    for i in range(n_proc):
        nid = b.add_node("process", f"proc{i}")
        if procs and rng.random() < 0.6:
            parent = rng.choice(procs)
            b.add_edge(parent, nid, "fork", ts)
            b.set_parent(nid, parent)
            ts += _STEP
        procs.append(nid)
    objs: list[int] = []
    for i in range(n - n_proc):
        kind = rng.choice(("file", "file", "socket", "registry", "pipe"))
        objs.append(b.add_node(kind, f"{kind[0]}obj{i}"))
    m = int(density * n)
    for _ in range(m):
        p = rng.choice(procs)
        if objs and rng.random() < 0.85:
            o = rng.choice(objs)
            event, sink = rng.choice(_OBJ_EVENTS[b.nodes[o].kind])
            src, dst = (p, o) if sink else (o, p)
        else:
            # non-lineage process-to-process traffic; self-loops allowed
            src, dst = p, rng.choice(procs)
            event = "send"
        b.add_edge(src, dst, event, ts)
        ts += _STEP
    return b.freeze()


def random_alignment_instance(rng: random.Random, max_qnodes: int = 5,
                              max_candidates: int = 4):
    """(query, graph) pair with few query nodes and few candidates per node."""
    from .query import parse_query as _parse

    for _ in range(200):
        g = random_provenance_graph(rng, n_min=10, n_max=24, density=2.5)
        n_q = rng.randint(2, max_qnodes)
        picks = rng.sample(range(g.n_nodes), min(n_q, g.n_nodes))
        nodes = []
        for idx, nid in enumerate(picks):
            label = g.label_of(nid)
            pattern = label if rng.random() < 0.7 else label[:max(1, len(label) - 2)] + "*"
            nodes.append({"qid": f"q{idx}", "kind": g.kind_of(nid), "pattern": pattern})
        edges = []
        for i in range(1, len(picks)):
            j = rng.randint(0, i - 1)
            a, bq = (f"q{j}", f"q{i}") if rng.random() < 0.5 else (f"q{i}", f"q{j}")
            edges.append({"src": a, "dst": bq})
        if not edges:
            continue
        q = _parse({"nodes": nodes, "edges": edges})
        from .align import find_candidates

        counts = [find_candidates(q, g).count(qid) for qid in q.nodes]
        if all(c <= max_candidates for c in counts) and any(c > 0 for c in counts):
            return q, g
    raise GenerationError("could not sample a small alignment instance")
