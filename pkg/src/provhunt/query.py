"""Attack-behavior query graphs: label pattern language, aliases, flow closure.

A query document is JSON with ``nodes`` (qid, kind, pattern, optional pin),
``edges`` (src, dst, optional event/ord) and an optional ``aliases`` map that
overrides the shipped defaults.  Node patterns are matched whole-label and
case-insensitively; ``*`` spans separators, ``%NAME%`` expands via the alias
table, and ``re:``-prefixed patterns are anchored regexes.
"""

from __future__ import annotations

import ipaddress
import json
import re
import warnings
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .prov import ENTITY_KINDS, EVENT_KINDS


class PatternError(ValueError):
    """Malformed label pattern or unresolvable alias."""


class QueryParseError(ValueError):
    """Malformed query document."""


_ALIAS_RE = re.compile(r"%([^%]+)%")
_META_CHARS = set("*?[]()|%")
_RFC1918 = tuple(ipaddress.ip_network(n) for n in
                 ("10.0.0.0/8", "172.16.0.0/12", "192.168.0.0/16"))


def is_external_ip(label: str) -> bool:
    """True for an IP literal (optionally ``ip:port``) outside RFC1918/loopback."""
    host = label
    if label.count(":") == 1:
        head, _, port = label.partition(":")
        if port.isdigit():
            host = head
    try:
        addr = ipaddress.ip_address(host)
    except ValueError:
        return False
    if addr.version == 6:
        return not (addr.is_loopback or addr.is_private)
    return not (addr.is_loopback or any(addr in net for net in _RFC1918))


_PREDICATES = {"external_ip": is_external_ip}


def _class_body(body: str) -> bool:
    # single chars, ranges, or negations read as character classes;
    # longer bracket tokens like [hkcu] stay literal
    return len(body) == 1 or "-" in body or body.startswith("^")


def _glob_to_regex(glob: str) -> str:
    out = []
    depth = 0
    i = 0
    while i < len(glob):
        c = glob[i]
        if c == "*":
            out.append(".*")
        elif c == "?":
            out.append(".")
        elif c == "(":
            out.append("(?:")
            depth += 1
        elif c == ")" and depth:
            out.append(")")
            depth -= 1
        elif c == "|":
            out.append("|")
        elif c == "[":
            j = glob.find("]", i + 1)
            body = glob[i + 1:j] if j > i + 1 else None
            if body is not None and _class_body(body):
                out.append("[" + body + "]")
                i = j
            else:
                out.append(re.escape(c))
        else:
            out.append(re.escape(c))
        i += 1
    if depth:
        raise PatternError(f"unbalanced group in pattern {glob!r}")
    return "".join(out)


def _normalize_glob(glob: str) -> str:
    # patterns face canonical labels: unify separators on windows-looking
    # globs, collapse runs, drop a trailing separator (registry-key patterns
    # often carry one)
    s = glob
    if "\\" in s:
        s = s.replace("/", "\\")
    s = re.sub(r"\\{2,}", r"\\", s)
    if len(s) > 1:
        s = s.rstrip("\\/") or s[0]
    return s


@dataclass(frozen=True)
class AliasEntry:
    globs: tuple[str, ...] = ()
    predicate: str | None = None


class AliasTable:
    """Named pattern shorthands: ``%NAME%`` -> glob disjunction or predicate."""

    def __init__(self, entries: dict[str, AliasEntry]):
        self._entries = {}
        for name, entry in entries.items():
            if entry.predicate is not None and entry.predicate not in _PREDICATES:
                raise PatternError(f"alias {name!r}: unknown predicate {entry.predicate!r}")
            for g in entry.globs:
                if "%" in g:
                    raise PatternError(f"alias {name!r}: expansions may not nest aliases")
            self._entries[name.lower()] = entry

    def get(self, name: str) -> AliasEntry:
        entry = self._entries.get(name.lower())
        if entry is None:
            raise PatternError(f"unknown alias %{name}%")
        return entry

    def names(self) -> list[str]:
        return sorted(self._entries)

    @classmethod
    def from_dict(cls, data: dict) -> "AliasTable":
        entries = {}
        for name, value in data.items():
            if isinstance(value, dict) and "predicate" in value:
                entries[name] = AliasEntry(predicate=value["predicate"])
            elif isinstance(value, (list, tuple)):
                entries[name] = AliasEntry(globs=tuple(str(v) for v in value))
            else:
                raise PatternError(f"alias {name!r}: expected list of globs or predicate")
        return cls(entries)

    def merged(self, overrides: dict | None) -> "AliasTable":
        if not overrides:
            return self
        table = AliasTable.from_dict(overrides)
        combined = dict(self._entries)
        combined.update(table._entries)
        out = AliasTable({})
        out._entries = combined
        return out


_DEFAULTS: AliasTable | None = None


def default_aliases() -> AliasTable:
    global _DEFAULTS
    if _DEFAULTS is None:
        raw = resources.files("provhunt.data").joinpath("aliases.json").read_text("utf-8")
        _DEFAULTS = AliasTable.from_dict(json.loads(raw)["aliases"])
    return _DEFAULTS


@dataclass(frozen=True)
class CompiledPattern:
    source: str
    regex: re.Pattern | None = None
    predicate: str | None = None
    exact: str | None = None

    def matches(self, label: str) -> bool:
        if self.exact is not None:
            return label.lower() == self.exact
        if self.predicate is not None:
            return _PREDICATES[self.predicate](label)
        return self.regex.fullmatch(label) is not None


def _expand_aliases(source: str, aliases: AliasTable) -> list[str]:
    m = _ALIAS_RE.search(source)
    if m is None:
        return [source]
    entry = aliases.get(m.group(1))
    if entry.predicate is not None:
        raise PatternError(
            f"predicate alias %{m.group(1)}% must stand alone, not inside {source!r}")
    expanded = []
    for g in entry.globs:
        replaced = source[:m.start()] + g + source[m.end():]
        expanded.extend(_expand_aliases(replaced, aliases))
    return expanded


def compile_pattern(source: str, aliases: AliasTable | None = None) -> CompiledPattern:
    """Compile a label pattern; raises PatternError when malformed."""
    if not isinstance(source, str) or not source:
        raise PatternError("pattern must be a non-empty string")
    aliases = aliases or default_aliases()

    if source.startswith("re:"):
        body = source[3:]
        try:
            rx = re.compile(r"\A(?:%s)\Z" % body, re.IGNORECASE)
        except re.error as exc:
            raise PatternError(f"bad regex pattern {source!r}: {exc}") from exc
        return CompiledPattern(source, regex=rx)

    whole = _ALIAS_RE.fullmatch(source)
    if whole is not None:
        entry = aliases.get(whole.group(1))
        if entry.predicate is not None:
            return CompiledPattern(source, predicate=entry.predicate)

    globs = [_normalize_glob(g) for g in _expand_aliases(source, aliases)]
    if len(globs) == 1 and not (_META_CHARS & set(globs[0])):
        return CompiledPattern(source, exact=globs[0].lower())
    alternatives = "|".join(_glob_to_regex(g) for g in globs)
    rx = re.compile(r"\A(?:%s)\Z" % alternatives, re.IGNORECASE)
    return CompiledPattern(source, regex=rx)


def _parse_kinds(kind) -> tuple[str, ...]:
    if isinstance(kind, str):
        parts = [kind] if kind in ("*", "any") else kind.split("|")
    elif isinstance(kind, (list, tuple)):
        parts = list(kind)
    else:
        raise QueryParseError(f"bad node kind {kind!r}")
    if parts in (["*"], ["any"]):
        return ENTITY_KINDS
    for p in parts:
        if p not in ENTITY_KINDS:
            raise QueryParseError(f"unknown entity kind {p!r}")
    return tuple(dict.fromkeys(parts))


@dataclass
class QueryNode:
    qid: str
    kind: str
    kinds: tuple[str, ...]
    pattern: str
    compiled: CompiledPattern
    pin: int | None = None


@dataclass(frozen=True)
class QueryEdge:
    src: str
    dst: str
    event: str | None = None
    ord: int | None = None


class QueryGraph:
    """Parsed, immutable attack-behavior graph with its flow closure cached."""

    def __init__(self, nodes: dict[str, QueryNode], edges: list[QueryEdge],
                 aliases: AliasTable, name: str | None = None):
        self.nodes = nodes
        self.edges = edges
        self.aliases = aliases
        self.name = name
        self.flows = transitive_flows(list(nodes), [(e.src, e.dst) for e in edges])
        self._out: dict[str, tuple[str, ...]] = {q: () for q in nodes}
        self._in: dict[str, tuple[str, ...]] = {q: () for q in nodes}
        out: dict[str, list[str]] = {q: [] for q in nodes}
        inn: dict[str, list[str]] = {q: [] for q in nodes}
        for i, j in sorted(self.flows):
            out[i].append(j)
            inn[j].append(i)
        self._out = {q: tuple(v) for q, v in out.items()}
        self._in = {q: tuple(v) for q, v in inn.items()}
        adj: dict[str, set[str]] = {q: set() for q in nodes}
        for e in edges:
            adj[e.src].add(e.dst)
            adj[e.dst].add(e.src)
        self._adjacent = {q: tuple(sorted(v)) for q, v in adj.items()}

    @property
    def flow_count(self) -> int:
        return len(self.flows)

    def out_flow_neighbors(self, qid: str) -> tuple[str, ...]:
        return self._out[qid]

    def in_flow_neighbors(self, qid: str) -> tuple[str, ...]:
        return self._in[qid]

    def adjacent(self, qid: str) -> tuple[str, ...]:
        """Edge-adjacent qids (either direction), sorted."""
        return self._adjacent[qid]


def transitive_flows(qids: list[str], edge_pairs: list[tuple[str, str]]) -> frozenset:
    succ: dict[str, set[str]] = {q: set() for q in qids}
    for a, b in edge_pairs:
        succ[a].add(b)
    flows = set()
    for start in qids:
        stack = list(succ[start])
        reached = set()
        while stack:
            cur = stack.pop()
            if cur in reached:
                continue
            reached.add(cur)
            stack.extend(succ[cur])
        for dst in reached:
            if dst != start:
                flows.add((start, dst))
    return frozenset(flows)


def flows_of(g: QueryGraph) -> frozenset:
    """All ordered (i, j) pairs, i != j, with a directed path i -> j."""
    return g.flows


def match_pattern(pattern, label: str, kind_q, kind_p: str,
                  aliases: AliasTable | None = None) -> bool:
    """Whole-label match after alias expansion, gated on kind compatibility."""
    kinds = _parse_kinds(kind_q)
    if kind_p not in kinds:
        return False
    compiled = pattern if isinstance(pattern, CompiledPattern) \
        else compile_pattern(pattern, aliases)
    return compiled.matches(label)


def parse_query(doc, name: str | None = None) -> QueryGraph:
    """Parse and validate a query document (dict, JSON text, or path)."""
    if isinstance(doc, Path):
        doc = doc.read_text("utf-8")
    if isinstance(doc, str):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise QueryParseError(f"query document is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise QueryParseError("query document must be a JSON object")

    aliases = default_aliases().merged(doc.get("aliases"))
    raw_nodes = doc.get("nodes")
    raw_edges = doc.get("edges", [])
    if not isinstance(raw_nodes, list) or len(raw_nodes) < 2:
        raise QueryParseError("query graph needs at least 2 nodes")

    nodes: dict[str, QueryNode] = {}
    for idx, rn in enumerate(raw_nodes):
        qid = rn.get("qid")
        if not qid or not isinstance(qid, str):
            raise QueryParseError(f"node #{idx}: missing qid")
        if qid in nodes:
            raise QueryParseError(f"duplicate qid {qid!r}")
        kinds = _parse_kinds(rn.get("kind", "*"))
        pattern = rn.get("pattern", "*")
        try:
            compiled = compile_pattern(pattern, aliases)
        except PatternError as exc:
            raise QueryParseError(f"node {qid!r}: {exc}") from exc
        pin = rn.get("pin")
        if pin is not None and (not isinstance(pin, int) or pin < 0):
            raise QueryParseError(f"node {qid!r}: pin must be a node id")
        nodes[qid] = QueryNode(qid, rn.get("kind", "*"), kinds, pattern, compiled, pin)

    edges: list[QueryEdge] = []
    for idx, re_ in enumerate(raw_edges):
        src, dst = re_.get("src"), re_.get("dst")
        for end in (src, dst):
            if end not in nodes:
                raise QueryParseError(f"edge #{idx}: unknown endpoint {end!r}")
        event = re_.get("event")
        if event is not None and event not in EVENT_KINDS:
            raise QueryParseError(f"edge #{idx}: unknown event kind {event!r}")
        edges.append(QueryEdge(src, dst, event, re_.get("ord")))

    if len(nodes) > 40 or len(edges) > 150:
        warnings.warn(
            f"query graph is unusually large ({len(nodes)} nodes, {len(edges)} edges)",
            RuntimeWarning, stacklevel=2)

    return QueryGraph(nodes, edges, aliases, name=doc.get("name", name))


def load_query_file(path) -> QueryGraph:
    p = Path(path)
    try:
        doc = json.loads(p.read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise QueryParseError(f"{p}: not valid JSON: {exc}") from exc
    return parse_query(doc, name=p.stem)


def builtin_query_names() -> list[str]:
    base = resources.files("provhunt.data.queries")
    return sorted(p.name[:-5] for p in base.iterdir() if p.name.endswith(".json"))


def load_builtin_query(name: str) -> QueryGraph:
    base = resources.files("provhunt.data.queries")
    f = base.joinpath(f"{name}.json")
    if not f.is_file():
        raise QueryParseError(
            f"unknown built-in query {name!r}; available: {builtin_query_names()}")
    return parse_query(json.loads(f.read_text("utf-8")), name=name)
