"""Influence scoring between provenance nodes.

The cost of a flow is the number of distinct process-ancestry roots an
attacker must independently compromise to produce it; the influence score is
the reciprocal of the cheapest flow, zero once every flow costs more than the
configured bound.  The search is exact: per-node state is the antichain of
Pareto-minimal compromise-root sets, so cyclic graphs and long fork chains
are handled without simple-path enumeration.
"""

from __future__ import annotations

from collections import OrderedDict, deque
from dataclasses import dataclass
from fractions import Fraction


@dataclass(frozen=True)
class InfluenceResult:
    gamma: Fraction
    cmin: int | None                      # None means unreachable under the bound
    witness_roots: tuple[int, ...] | None = None
    witness_path: tuple[int, ...] | None = None

    @property
    def reachable(self) -> bool:
        return self.cmin is not None


UNREACHABLE = InfluenceResult(Fraction(0), None)


def cmin_of_path(path, graph) -> int:
    """Compromise cost of one directed path: distinct ancestry roots among its
    process nodes.  Raises ValueError if the path is not directed-connected."""
    if len(path) < 2:
        raise ValueError("a path needs at least two nodes")
    for u, v in zip(path, path[1:]):
        if not graph.has_edge(u, v):
            raise ValueError(f"no edge {u} -> {v}; path is not directed-connected")
    roots = {graph.root_of(n) for n in path if graph.is_process(n)}
    roots.discard(-1)
    if not roots:
        raise ValueError("path contains no process node")
    return len(roots)


class InfluenceCache:
    """Session-local cache of pairwise results and whole reachability sweeps.

    The graph is frozen, so a hit is always identical to recomputation.  The
    optional capacity bounds the pairwise map with LRU eviction; sweeps are
    kept per origin.
    """

    def __init__(self, max_pairs: int | None = None):
        self._pairs: OrderedDict[tuple[int, int], InfluenceResult] = OrderedDict()
        self._sweeps: dict[tuple[int, str], dict[int, InfluenceResult]] = {}
        self.max_pairs = max_pairs
        self.hits = 0
        self.misses = 0

    def pair(self, src: int, dst: int) -> InfluenceResult | None:
        res = self._pairs.get((src, dst))
        if res is not None:
            self._pairs.move_to_end((src, dst))
            self.hits += 1
            return res
        self.misses += 1
        return None

    def put_pair(self, src: int, dst: int, res: InfluenceResult) -> None:
        self._pairs[(src, dst)] = res
        self._pairs.move_to_end((src, dst))
        if self.max_pairs is not None:
            while len(self._pairs) > self.max_pairs:
                self._pairs.popitem(last=False)

    def sweep(self, origin: int, direction: str) -> dict[int, InfluenceResult] | None:
        return self._sweeps.get((origin, direction))

    def put_sweep(self, origin: int, direction: str,
                  result: dict[int, InfluenceResult]) -> None:
        self._sweeps[(origin, direction)] = result


class InfluenceEngine:
    """Bounded-compromise reachability over a frozen provenance graph."""

    def __init__(self, graph, cthr: int = 3, cache: InfluenceCache | None = None):
        if cthr < 1:
            raise ValueError("cthr must be >= 1")
        self.graph = graph
        self.cthr = cthr
        self.cache = cache or InfluenceCache()

    def influence(self, src: int, dst: int) -> InfluenceResult:
        """Influence of src over dst: max of 1/cost over all flows src -> dst."""
        g = self.graph
        g._check(src)
        g._check(dst)
        if src == dst:
            return UNREACHABLE  # flows require distinct endpoints
        hit = self.cache.pair(src, dst)
        if hit is not None:
            return hit
        res = self.bounded_reach(src, "forward").get(dst, UNREACHABLE)
        self.cache.put_pair(src, dst, res)
        return res

    def bounded_reach(self, src: int, direction: str = "forward") -> dict[int, InfluenceResult]:
        """Influence results from src to every node reachable under the bound
        (or *to* src, for backward).  Identical per-pair values to influence()."""
        if direction not in ("forward", "backward"):
            raise ValueError(f"unknown direction {direction!r}")
        self.graph._check(src)
        cached = self.cache.sweep(src, direction)
        if cached is not None:
            return cached
        result = self._sweep(src, direction == "forward")
        self.cache.put_sweep(src, direction, result)
        return result

    def _sweep(self, src: int, forward: bool) -> dict[int, InfluenceResult]:
        g = self.graph
        limit = self.cthr
        root0 = g.root_of(src)
        s0 = frozenset() if root0 < 0 else frozenset((root0,))

        antichain: dict[int, list[frozenset]] = {src: [s0]}
        back: dict[tuple[int, frozenset], tuple[int, frozenset] | None] = {(src, s0): None}
        queue: deque[tuple[int, frozenset]] = deque([(src, s0)])

        while queue:
            u, s = queue.popleft()
            if s not in antichain.get(u, ()):
                continue  # dominated after it was queued
            for v in g.flow_neighbors(u, forward):
                v = int(v)
                r = g.root_of(v)
                s2 = s if (r < 0 or r in s) else s | {r}
                if len(s2) > limit:
                    continue
                sets = antichain.setdefault(v, [])
                if any(t <= s2 for t in sets):
                    continue
                sets[:] = [t for t in sets if not s2 <= t]
                sets.append(s2)
                key = (v, s2)
                if key not in back:
                    back[key] = (u, s)
                queue.append(key)

        results: dict[int, InfluenceResult] = {}
        for v, sets in antichain.items():
            if v == src:
                continue
            best = min(sets, key=lambda t: (len(t), tuple(sorted(t))))
            cost = len(best)
            path = self._walk_back(back, v, best, forward)
            results[v] = InfluenceResult(
                Fraction(1, cost), cost, tuple(sorted(best)), path)
        return results

    @staticmethod
    def _walk_back(back, node, rootset, forward) -> tuple[int, ...]:
        seq = [node]
        cur = (node, rootset)
        while True:
            prev = back[cur]
            if prev is None:
                break
            seq.append(prev[0])
            cur = prev
        if forward:
            seq.reverse()
        return tuple(seq)
