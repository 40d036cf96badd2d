"""provhunt: align attack-behavior query graphs against audit provenance graphs."""

__version__ = "0.1.0"

from .align import (
    CandidateTable,
    GraphAlignment,
    HuntResult,
    SearchConfig,
    alignment_score,
    find_candidates,
    hunt,
)
from .influence import InfluenceCache, InfluenceEngine, InfluenceResult, cmin_of_path
from .ingest import AuditEvent, IngestStats, Ingestor, ingest_lines, ingest_path
from .prov import GraphBuilder, ProvEdge, ProvGraph, ProvNode, merge_builders
from .query import (
    AliasTable,
    QueryGraph,
    QueryNode,
    compile_pattern,
    flows_of,
    load_builtin_query,
    load_query_file,
    match_pattern,
    parse_query,
)
from .snapshot import load_snapshot, save_snapshot

__all__ = [
    "AliasTable", "AuditEvent", "CandidateTable", "GraphAlignment",
    "GraphBuilder", "HuntResult", "InfluenceCache", "InfluenceEngine",
    "InfluenceResult", "IngestStats", "Ingestor", "ProvEdge", "ProvGraph",
    "ProvNode", "QueryGraph", "QueryNode", "SearchConfig", "alignment_score",
    "cmin_of_path", "compile_pattern", "find_candidates", "flows_of", "hunt",
    "ingest_lines", "ingest_path", "load_builtin_query", "load_query_file",
    "load_snapshot", "match_pattern", "merge_builders", "parse_query",
    "save_snapshot",
]
