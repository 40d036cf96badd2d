"""Ground-truth checks: exhaustive path costs, brute-force alignment, F-score sweep."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction

from .align import (
    CandidateTable,
    GraphAlignment,
    SearchConfig,
    alignment_score,
    find_candidates,
)
from .influence import InfluenceEngine


class OracleCapError(RuntimeError):
    """The instance exceeds the configured enumeration budget."""


def brute_force_cmin_from(src: int, g, max_paths: int = 100_000) -> dict[int, int]:
    """Min compromise cost to every node via exhaustive simple-path enumeration.

    Deliberately independent of the influence engine: plain DFS over all
    simple paths, no antichains, no bound-based pruning.
    """
    best: dict[int, int] = {}
    on_path = {src}
    counter = [0]

    def roots_with(roots: frozenset, node: int) -> frozenset:
        r = g.root_of(node)
        return roots if r < 0 or r in roots else roots | {r}

    def dfs(u: int, roots: frozenset):
        for v in g.flow_neighbors(u, True):
            v = int(v)
            if v in on_path:
                continue
            counter[0] += 1
            if counter[0] > max_paths:
                raise OracleCapError(f"more than {max_paths} simple paths from {src}")
            r2 = roots_with(roots, v)
            if v != src:
                prev = best.get(v)
                if prev is None or len(r2) < prev:
                    best[v] = len(r2)
            on_path.add(v)
            dfs(v, r2)
            on_path.discard(v)

    start = frozenset() if g.root_of(src) < 0 else frozenset((g.root_of(src),))
    dfs(src, start)
    return best


def brute_force_cmin(src: int, dst: int, g, max_paths: int = 100_000) -> int | None:
    """Minimum compromise cost over all simple paths src -> dst (None if no path)."""
    return brute_force_cmin_from(src, g, max_paths).get(dst)


def alignment_space(counts, include_unaligned: bool = False) -> int:
    """Number of graph alignments a candidate table admits."""
    total = 1
    for c in counts:
        total *= c + (1 if include_unaligned else 0)
    return total


@dataclass
class OracleResult:
    best: GraphAlignment
    n_assignments: int


def brute_force_best_alignment(q, g, cfg: SearchConfig | None = None,
                               table: CandidateTable | None = None,
                               cap: int = 1_000_000) -> OracleResult:
    """Exact maximizer of the alignment score over every assignment drawn from
    the candidate table, each query node also allowed to stay unaligned."""
    cfg = cfg or SearchConfig()
    if table is None:
        table = find_candidates(q, g)
    qids = list(q.nodes)
    counts = [table.count(qid) for qid in qids]
    n = alignment_space(counts, include_unaligned=True)
    if n > cap:
        raise OracleCapError(f"{n} assignments exceed the cap of {cap}")

    engine = InfluenceEngine(g, cfg.cthr)
    gammas: dict[tuple[int, int], Fraction] = {}
    flow_pairs = sorted(q.flows)
    for i, j in flow_pairs:
        for k in table.candidates(i):
            reach = engine.bounded_reach(k, "forward")
            for m in table.candidates(j):
                gammas.setdefault((k, m), reach[m].gamma if m in reach else Fraction(0))

    options = [table.candidates(qid) + [None] for qid in qids]
    norm = len(q.flows)
    best_assignment = None
    best_total = Fraction(-1)
    for combo in itertools.product(*options):
        assign = dict(zip(qids, combo))
        total = Fraction(0)
        for i, j in flow_pairs:
            k, m = assign[i], assign[j]
            if k is not None and m is not None and k != m:
                total += gammas.get((k, m), Fraction(0))
        if total > best_total:
            best_total = total
            best_assignment = assign

    score, per_flow = alignment_score(best_assignment, q, g, cfg, engine)
    ga = GraphAlignment(best_assignment, score, per_flow, 0, None,
                        score >= cfg.threshold)
    return OracleResult(ga, n)


@dataclass
class SweepRow:
    threshold: Fraction
    precision: Fraction
    recall: Fraction
    f1: Fraction


@dataclass
class SweepResult:
    rows: list[SweepRow]
    max_f1: Fraction
    interval: tuple[Fraction, Fraction]
    midpoint: Fraction


def threshold_sweep(scores_attack, scores_benign,
                    step: Fraction = Fraction(1, 100)) -> SweepResult:
    """F-score over a grid of alarm thresholds (alarm iff score >= t), plus the
    widest grid interval attaining the maximum F and its midpoint."""
    attack = [Fraction(s) if not isinstance(s, float) else Fraction(str(s))
              for s in scores_attack]
    benign = [Fraction(s) if not isinstance(s, float) else Fraction(str(s))
              for s in scores_benign]
    if not attack or not benign:
        raise ValueError("both score collections must be non-empty")
    step = Fraction(step)
    if not (0 < step <= 1):
        raise ValueError("step must lie in (0, 1]")

    rows: list[SweepRow] = []
    n_grid = int(Fraction(1) / step)
    for k in range(1, n_grid + 1):
        t = k * step
        tp = sum(1 for s in attack if s >= t)
        fp = sum(1 for s in benign if s >= t)
        fn = len(attack) - tp
        precision = Fraction(tp, tp + fp) if tp + fp else Fraction(0)
        recall = Fraction(tp, tp + fn) if tp + fn else Fraction(0)
        f1 = Fraction(2 * tp, 2 * tp + fp + fn) if (2 * tp + fp + fn) else Fraction(0)
        rows.append(SweepRow(t, precision, recall, f1))

    max_f1 = max(r.f1 for r in rows)
    best_run: tuple[int, int] | None = None
    run_start = None
    for idx, row in enumerate(rows + [None]):
        if row is not None and row.f1 == max_f1:
            if run_start is None:
                run_start = idx
        else:
            if run_start is not None:
                run = (run_start, idx - 1)
                if best_run is None or (run[1] - run[0]) > (best_run[1] - best_run[0]):
                    best_run = run
                run_start = None
    lo = rows[best_run[0]].threshold
    hi = rows[best_run[1]].threshold
    return SweepResult(rows, max_f1, (lo, hi), (lo + hi) / 2)
