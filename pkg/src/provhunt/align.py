"""Best-effort alignment of a query graph inside a provenance graph.

One hunt iteration anchors the search at a single (seed qid, seed node) pair:
bounded influence sweeps prune the candidate table, then a greedy walk over
the query edges fixes one alignment per query node by maximizing its
approximate contribution to the final score.  Iterations consume seeds in
ascending candidate-count order until an alignment clears the alarm
threshold or the iteration budget runs out.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from fractions import Fraction

from .influence import UNREACHABLE, InfluenceEngine, InfluenceResult
from .query import QueryGraph


class DegenerateQueryError(ValueError):
    """Query graph has no flows; the score normalizer would be zero."""


def _as_fraction(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        return Fraction(str(value))
    return Fraction(value)


@dataclass
class SearchConfig:
    cthr: int = 3
    tau: Fraction | None = None          # defaults to 1/cthr
    max_iterations: int = 20
    rng_seed: int = 0
    stop_on_first_alarm: bool = True

    def __post_init__(self):
        if self.cthr < 1:
            raise ValueError("cthr must be >= 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.tau is not None:
            self.tau = _as_fraction(self.tau)
            if not (0 < self.tau <= 1):
                raise ValueError("tau must lie in (0, 1]")

    @property
    def threshold(self) -> Fraction:
        return self.tau if self.tau is not None else Fraction(1, self.cthr)


class CandidateTable:
    """Per-query-node candidate provenance nodes, in ascending-id order."""

    def __init__(self, per_qid: dict[str, list[int]]):
        self._table = {qid: sorted(set(ids)) for qid, ids in per_qid.items()}

    def qids(self) -> list[str]:
        return list(self._table)

    def candidates(self, qid: str) -> list[int]:
        return self._table[qid]

    def count(self, qid: str) -> int:
        return len(self._table[qid])

    def as_dict(self) -> dict[str, list[int]]:
        return {qid: list(ids) for qid, ids in self._table.items()}

    def __contains__(self, qid: str) -> bool:
        return qid in self._table


@dataclass
class GraphAlignment:
    assignment: dict[str, int | None]
    score: Fraction
    per_flow: dict[tuple[str, str], InfluenceResult]
    iterations_used: int
    seed: tuple[str, int] | None
    alarm: bool

    def aligned(self) -> dict[str, int]:
        return {q: n for q, n in self.assignment.items() if n is not None}


@dataclass
class IterationRecord:
    iteration: int
    seed_qid: str
    seed_node: int
    score: Fraction
    alarm: bool


@dataclass
class ExpandResult:
    pruned: CandidateTable
    records: dict[tuple[int, int], InfluenceResult]
    sweep_origins: list[int]
    visited: set[int]


@dataclass
class HuntResult:
    best: GraphAlignment
    alarm: bool
    iterations: list[IterationRecord]
    table: CandidateTable

    @property
    def score(self) -> Fraction:
        return self.best.score


# -- Step 1 ---------------------------------------------------------------

def find_candidates(q: QueryGraph, g) -> CandidateTable:
    """All provenance nodes each query node could align with, by name and kind."""
    table: dict[str, list[int]] = {}
    for qid, node in q.nodes.items():
        if node.pin is not None:
            g._check(node.pin)
            table[qid] = [node.pin]
            continue
        ids: list[int] = []
        compiled = node.compiled
        for kind in node.kinds:
            pool = g.nodes_of_kind(kind)
            if compiled.exact is not None:
                ids.extend(n for n in g.lookup_exact(compiled.exact)
                           if g.kind_of(n) == kind)
            else:
                ids.extend(int(n) for n in pool if compiled.matches(g.label_of(int(n))))
        table[qid] = sorted(set(ids))
    return CandidateTable(table)


# -- Step 2 ---------------------------------------------------------------

def select_seed(table: CandidateTable, used: set[tuple[str, int]],
                rng: random.Random) -> tuple[str, int] | None:
    """Next unused seed from the qid with the fewest candidates.

    Count ties between qids break via the supplied seeded RNG; within a qid,
    candidates are consumed in ascending-id order.  Returns None on exhaustion.
    """
    avail: list[tuple[int, str]] = []
    for qid in table.qids():
        count = table.count(qid)
        if count == 0:
            continue
        if any((qid, c) not in used for c in table.candidates(qid)):
            avail.append((count, qid))
    if not avail:
        return None
    lowest = min(c for c, _ in avail)
    tied = sorted(q for c, q in avail if c == lowest)
    qid = tied[0] if len(tied) == 1 else rng.choice(tied)
    for cand in table.candidates(qid):
        if (qid, cand) not in used:
            return (qid, cand)
    return None  # unreachable given the avail filter


# -- Step 3 ---------------------------------------------------------------

def expand(seed: tuple[str, int], q: QueryGraph, g, table: CandidateTable,
           cfg: SearchConfig, engine: InfluenceEngine) -> ExpandResult:
    """Bounded sweeps out of the seed, re-seeded from visited nodes adjacent to
    still-uncovered candidates, pruning each qid to candidates reached with a
    positive influence score in a query-consistent direction."""
    seed_qid, seed_node = seed
    records: dict[tuple[int, int], InfluenceResult] = {}
    visited: set[int] = set()
    cand_sets = {qid: set(table.candidates(qid)) for qid in q.nodes}
    retained: dict[str, set[int]] = {qid: set() for qid in q.nodes}
    swept: set[int] = set()
    origins_log: list[int] = []

    def sweep(origin: int):
        fwd = engine.bounded_reach(origin, "forward")
        bwd = engine.bounded_reach(origin, "backward")
        visited.add(origin)
        for v, res in fwd.items():
            records[(origin, v)] = res
            visited.add(v)
        for v, res in bwd.items():
            records[(v, origin)] = res
            visited.add(v)
        swept.add(origin)
        origins_log.append(origin)
        return fwd, bwd

    def retain(origin: int, origin_qids: set[str], fwd, bwd):
        if origin_qids:
            for oq in origin_qids:
                if origin in cand_sets[oq]:
                    retained[oq].add(origin)
                for j in q.nodes:
                    if (oq, j) in q.flows:
                        retained[j] |= cand_sets[j] & fwd.keys()
                    if (j, oq) in q.flows:
                        retained[j] |= cand_sets[j] & bwd.keys()
        else:
            # origin aligned with nothing: no flow direction to check
            reach = fwd.keys() | bwd.keys() | {origin}
            for j in q.nodes:
                retained[j] |= cand_sets[j] & reach

    fwd, bwd = sweep(seed_node)
    retain(seed_node, {seed_qid}, fwd, bwd)

    while True:
        uncovered = [qid for qid in q.nodes if cand_sets[qid] and not retained[qid]]
        if not uncovered:
            break
        origins: set[int] = set()
        for qid in uncovered:
            for cand in sorted(cand_sets[qid] - visited):
                for nb in g.neighbor_ids(cand):
                    nb = int(nb)
                    if nb in visited and nb not in swept:
                        origins.add(nb)
        if not origins:
            break
        origin = min(origins)
        fwd, bwd = sweep(origin)
        oq = {qid for qid in q.nodes if origin in cand_sets[qid]}
        retain(origin, oq, fwd, bwd)

    pruned = {qid: sorted(retained[qid]) for qid in q.nodes}
    pruned[seed_qid] = [seed_node]
    for qid, node in q.nodes.items():
        if node.pin is not None:
            pruned[qid] = [node.pin]
    return ExpandResult(CandidateTable(pruned), records, origins_log, visited)


# -- Step 4 ---------------------------------------------------------------

class PairScores:
    """Gamma lookups backed by expand-phase records, backfilled on demand."""

    def __init__(self, records: dict[tuple[int, int], InfluenceResult],
                 engine: InfluenceEngine):
        self.records = records
        self.engine = engine

    def result(self, a: int, b: int) -> InfluenceResult:
        res = self.records.get((a, b))
        if res is None:
            res = self.engine.influence(a, b)
            self.records[(a, b)] = res
        return res

    def gamma(self, a: int, b: int) -> Fraction:
        return self.result(a, b).gamma


def contribution(i: str, k: int, fixed: dict[str, int | None],
                 table: CandidateTable, q: QueryGraph, scores: PairScores) -> Fraction:
    """Approximate contribution of aligning query node i with provenance node k:
    over each flow at i, the fixed counterpart's gamma if the far end is fixed,
    otherwise the best gamma among its remaining candidates."""
    total = Fraction(0)
    for j in q.out_flow_neighbors(i):
        if j in fixed:
            l = fixed[j]
            if l is not None:
                total += scores.gamma(k, l)
        else:
            best = Fraction(0)
            for m in table.candidates(j):
                gm = scores.gamma(k, m)
                if gm > best:
                    best = gm
            total += best
    for j in q.in_flow_neighbors(i):
        if j in fixed:
            l = fixed[j]
            if l is not None:
                total += scores.gamma(l, k)
        else:
            best = Fraction(0)
            for m in table.candidates(j):
                gm = scores.gamma(m, k)
                if gm > best:
                    best = gm
            total += best
    return total


def _walk_order(q: QueryGraph, seed_qid: str) -> list[str]:
    order = [seed_qid]
    seen = {seed_qid}
    frontier = [seed_qid]
    while frontier:
        nxt: list[str] = []
        for qid in frontier:
            for nb in q.adjacent(qid):
                if nb not in seen:
                    seen.add(nb)
                    order.append(nb)
                    nxt.append(nb)
        frontier = nxt
    for qid in q.nodes:  # disconnected leftovers, deterministic order
        if qid not in seen:
            order.append(qid)
            seen.add(qid)
    return order


def fix_alignments(seed: tuple[str, int], q: QueryGraph, table: CandidateTable,
                   scores: PairScores) -> dict[str, int | None]:
    """Greedy selection: fix the seed, then walk the query edges breadth-first,
    fixing each node to its highest-contribution surviving candidate (ties to
    the lowest node id).  Empty candidate sets become unaligned entries."""
    seed_qid, seed_node = seed
    fixed: dict[str, int | None] = {seed_qid: seed_node}
    for qid in _walk_order(q, seed_qid)[1:]:
        cands = table.candidates(qid)
        if not cands:
            fixed[qid] = None
            continue
        best_node = None
        best_val: Fraction | None = None
        for k in cands:  # ascending ids: first strict max wins ties
            val = contribution(qid, k, fixed, table, q, scores)
            if best_val is None or val > best_val:
                best_val = val
                best_node = k
        fixed[qid] = best_node
    return fixed


def alignment_score(assignment: dict[str, int | None], q: QueryGraph, g,
                    cfg: SearchConfig, engine: InfluenceEngine,
                    records: dict | None = None
                    ) -> tuple[Fraction, dict[tuple[str, str], InfluenceResult]]:
    """Average influence score over the query flows; unaligned endpoints
    contribute zero.  Exact rational arithmetic throughout."""
    if not q.flows:
        raise DegenerateQueryError("query graph has no flows")
    scores = PairScores(records if records is not None else {}, engine)
    per_flow: dict[tuple[str, str], InfluenceResult] = {}
    total = Fraction(0)
    for i, j in sorted(q.flows):
        k = assignment.get(i)
        l = assignment.get(j)
        res = UNREACHABLE if (k is None or l is None) else scores.result(k, l)
        per_flow[(i, j)] = res
        total += res.gamma
    return total / len(q.flows), per_flow


def _empty_alignment(q: QueryGraph) -> GraphAlignment:
    per_flow = {flow: UNREACHABLE for flow in sorted(q.flows)}
    return GraphAlignment({qid: None for qid in q.nodes}, Fraction(0),
                          per_flow, 0, None, False)


def hunt(q: QueryGraph, g, cfg: SearchConfig | None = None) -> HuntResult:
    """Iterate seed selection, expansion, and greedy fixing until an alignment
    clears the threshold (or, with stop_on_first_alarm off, for the full
    iteration budget), returning the best-scoring alignment found."""
    cfg = cfg or SearchConfig()
    if not q.flows:
        raise DegenerateQueryError("query graph has no flows")
    engine = InfluenceEngine(g, cfg.cthr)
    table = find_candidates(q, g)
    rng = random.Random(cfg.rng_seed)
    used: set[tuple[str, int]] = set()
    log: list[IterationRecord] = []
    best: GraphAlignment | None = None

    for iteration in range(1, cfg.max_iterations + 1):
        seed = select_seed(table, used, rng)
        if seed is None:
            break
        used.add(seed)
        ex = expand(seed, q, g, table, cfg, engine)
        scores = PairScores(ex.records, engine)
        assignment = fix_alignments(seed, q, ex.pruned, scores)
        score, per_flow = alignment_score(assignment, q, g, cfg, engine, ex.records)
        alarm = score >= cfg.threshold
        ga = GraphAlignment(assignment, score, per_flow, iteration, seed, alarm)
        log.append(IterationRecord(iteration, seed[0], seed[1], score, alarm))
        if best is None or score > best.score:
            best = ga
        if alarm and cfg.stop_on_first_alarm:
            break

    if best is None:
        best = _empty_alignment(q)
    return HuntResult(best, best.score >= cfg.threshold, log, table)
