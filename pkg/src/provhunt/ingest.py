"""NDJSON audit-event ingestion.

One event per line, UTF-8, gzip accepted.  Schema:

    {"ts": <int ns>, "event": "<kind>",
     "subject": {"pid": <int>, "exe": "<path>"},
     "object": {"kind": "<entity kind>", "name": "<label>", "pid": <int>?},
     "host": "<name>"?}

``object.pid`` is required when the object is a process (fork/clone targets).
Records are consumed in file order; out-of-order timestamps are tolerated.
"""

from __future__ import annotations

import gzip
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .prov import (
    ENTITY_KINDS,
    EVENT_KINDS,
    LINEAGE_EVENTS,
    OBJECT_IS_SINK,
    GraphBuilder,
    GraphBuildError,
)


class IngestError(ValueError):
    def __init__(self, message: str, line_no: int | None = None):
        self.line_no = line_no
        prefix = f"line {line_no}: " if line_no is not None else ""
        super().__init__(prefix + message)


@dataclass
class IngestStats:
    subjects: int = 0
    objects: int = 0
    events: int = 0
    lines: int = 0
    skipped: int = 0
    unknown_object_kinds: int = 0

    def as_dict(self) -> dict:
        return {
            "subjects": self.subjects,
            "objects": self.objects,
            "events": self.events,
            "lines": self.lines,
            "skipped": self.skipped,
            "unknown_object_kinds": self.unknown_object_kinds,
        }


@dataclass
class AuditEvent:
    ts: int
    event: str
    subject_pid: int
    subject_exe: str
    object_kind: str
    object_name: str
    object_pid: int | None = None
    host: str = ""

    @classmethod
    def from_record(cls, rec: dict, line_no: int | None = None) -> "AuditEvent":
        try:
            ts = rec["ts"]
            event = rec["event"]
            subject = rec["subject"]
            obj = rec["object"]
            spid, sexe = subject["pid"], subject["exe"]
            okind, oname = obj["kind"], obj["name"]
        except (KeyError, TypeError) as exc:
            raise IngestError(f"missing field {exc}", line_no) from exc
        if not isinstance(ts, int):
            raise IngestError("ts must be an integer (ns since epoch)", line_no)
        if event not in EVENT_KINDS:
            raise IngestError(f"unknown event kind {event!r}", line_no)
        if not isinstance(spid, int) or spid <= 0:
            raise IngestError("subject.pid must be a positive integer", line_no)
        if not isinstance(sexe, str) or not sexe:
            raise IngestError("subject.exe must be a non-empty string", line_no)
        if not isinstance(oname, str) or not oname:
            raise IngestError("object.name must be a non-empty string", line_no)
        opid = obj.get("pid")
        if opid is not None and (not isinstance(opid, int) or opid <= 0):
            raise IngestError("object.pid must be a positive integer", line_no)
        if event in LINEAGE_EVENTS:
            if okind != "process":
                raise IngestError(f"{event} object must be a process", line_no)
            if opid is None:
                raise IngestError(f"{event} object needs a pid", line_no)
        return cls(ts, event, spid, sexe, okind, oname, opid, rec.get("host", "") or "")


class Ingestor:
    """Feeds audit events into a GraphBuilder, tracking pid incarnations.

    Process identity is the (pid, exe) incarnation: a fork/clone that reuses a
    pid starts a fresh node, as does an unannounced pid/exe change.  exec keeps
    the node (and its lineage) but updates its image label.
    """

    def __init__(self, builder: GraphBuilder | None = None):
        self.builder = builder or GraphBuilder()
        self.stats = IngestStats()
        # (host, pid) -> (node id, current exe label)
        self._live: dict[tuple[str, int], tuple[int, str]] = {}

    def pid_incarnation(self, pid: int, ts: int, exe: str, host: str = "") -> int:
        """Node id for the live incarnation of (pid, exe), creating one if needed."""
        from .prov import canonical_label

        key = (host, pid)
        exe_label = canonical_label(exe)
        live = self._live.get(key)
        if live is not None and live[1] == exe_label:
            return live[0]
        attrs = {"pid": str(pid)}
        if host:
            attrs["host"] = host
        nid = self.builder.add_node("process", exe_label, attrs, canonical=True)
        self._live[key] = (nid, exe_label)
        if host:
            self.builder.hosts.add(host)
        return nid

    def _spawn(self, pid: int, exe: str, host: str) -> int:
        from .prov import canonical_label

        exe_label = canonical_label(exe)
        attrs = {"pid": str(pid)}
        if host:
            attrs["host"] = host
        nid = self.builder.add_node("process", exe_label, attrs, canonical=True)
        self._live[(host, pid)] = (nid, exe_label)
        if host:
            self.builder.hosts.add(host)
        return nid

    def feed(self, ev: AuditEvent, line_no: int | None = None) -> None:
        from .prov import canonical_label

        subj = self.pid_incarnation(ev.subject_pid, ev.ts, ev.subject_exe, ev.host)

        if ev.event in LINEAGE_EVENTS:
            obj = self._spawn(ev.object_pid, ev.object_name, ev.host)
            self.builder.set_parent(obj, subj)
        else:
            kind = ev.object_kind
            if kind not in ENTITY_KINDS:
                kind = "file"
                self.stats.unknown_object_kinds += 1
            if kind == "process":
                if ev.object_pid is not None:
                    obj = self.pid_incarnation(ev.object_pid, ev.ts,
                                               ev.object_name, ev.host)
                else:
                    obj = self.builder.object_node("process", ev.object_name, ev.host)
            else:
                obj = self.builder.object_node(kind, ev.object_name, ev.host)

        if OBJECT_IS_SINK[ev.event]:
            src, dst = subj, obj
        else:
            src, dst = obj, subj
        try:
            self.builder.add_edge(src, dst, ev.event, ev.ts)
        except GraphBuildError as exc:
            raise IngestError(str(exc), line_no) from exc
        self.stats.events += 1

        if ev.event == "exec":
            # the process now runs the exec'd image; same node (lineage kept),
            # renamed to the image's stem
            from .prov import image_stem

            new_label = canonical_label(image_stem(canonical_label(ev.object_name)))
            self.builder.relabel_node(subj, new_label)
            self._live[(ev.host, ev.subject_pid)] = (subj, new_label)

    def finish(self) -> tuple[GraphBuilder, IngestStats]:
        subjects = sum(1 for n in self.builder.nodes if n.kind == "process")
        self.stats.subjects = subjects
        self.stats.objects = len(self.builder.nodes) - subjects
        return self.builder, self.stats


def ingest_lines(lines: Iterable[str], on_error: str = "abort",
                 ingestor: Ingestor | None = None) -> tuple[GraphBuilder, IngestStats]:
    """Parse an iterable of NDJSON lines into a graph builder.

    on_error: "abort" raises IngestError at the offending line; "skip" counts
    the line and continues.
    """
    if on_error not in ("abort", "skip"):
        raise ValueError("on_error must be 'abort' or 'skip'")
    ing = ingestor or Ingestor()
    for line_no, line in enumerate(lines, start=1):
        ing.stats.lines = line_no
        stripped = line.strip()
        if not stripped:
            continue
        try:
            rec = json.loads(stripped)
            ev = AuditEvent.from_record(rec, line_no)
            ing.feed(ev, line_no)
        except (json.JSONDecodeError, IngestError) as exc:
            if on_error == "abort":
                if isinstance(exc, IngestError):
                    raise
                raise IngestError(f"not valid JSON: {exc}", line_no) from exc
            ing.stats.skipped += 1
    return ing.finish()


def open_event_stream(path) -> io.TextIOBase:
    """Open an NDJSON event file, transparently decoding gzip."""
    p = Path(path)
    raw = open(p, "rb")
    magic = raw.read(2)
    raw.seek(0)
    if magic == b"\x1f\x8b":
        return io.TextIOWrapper(gzip.GzipFile(fileobj=raw), encoding="utf-8")
    return io.TextIOWrapper(raw, encoding="utf-8")


def ingest_path(path, on_error: str = "abort") -> tuple[GraphBuilder, IngestStats]:
    with open_event_stream(path) as fh:
        return ingest_lines(fh, on_error=on_error)
