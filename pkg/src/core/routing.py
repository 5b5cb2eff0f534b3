"""
Routing state for a switch graph: ECMP next hops, shortest / k-shortest /
k edge-disjoint path sets, and the two-segment expressibility analysis.

Path lengths count switch-to-switch hops only; server links are implicit.
"""
import itertools
import threading
from dataclasses import dataclass

import networkx as nx
import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path

from src.errors import RoutingError
from src.utils.log import get_logger

logger = get_logger(__name__)

ECMP = 'ecmp'
K_SHORTEST = 'kshortest'
K_DISJOINT = 'kdisjoint'

DEFAULT_PATH_CAP = 64


@dataclass(frozen=True)
class Scheme:
    """Routing scheme tag: Ecmp, KShortest{k} or KDisjoint{k}"""

    name: str
    k: int = 1

    def __post_init__(self):
        if self.name not in (ECMP, K_SHORTEST, K_DISJOINT):
            raise RoutingError(f"unknown routing scheme '{self.name}'")
        if self.k < 1:
            raise RoutingError(f"path count K must be >= 1, got {self.k}")

    @classmethod
    def ecmp(cls):
        return cls(ECMP)

    @classmethod
    def k_shortest(cls, k):
        return cls(K_SHORTEST, k)

    @classmethod
    def k_disjoint(cls, k):
        return cls(K_DISJOINT, k)

    @property
    def source_routed(self):
        return self.name != ECMP

    def __str__(self):
        return ECMP if self.name == ECMP else f"{self.name}:{self.k}"

    @classmethod
    def parse(cls, text, k=None):
        """'ecmp', 'kshortest:4' or 'kdisjoint' plus an explicit k"""
        name, _, count = (text or '').strip().lower().partition(':')
        name = name.replace('_', '').replace('-', '')
        if name == ECMP:
            return cls.ecmp()
        if count:
            try:
                k = int(count)
            except ValueError:
                raise RoutingError(f"bad path count in scheme '{text}'")
        return cls(name, k if k is not None else 1)


@dataclass(frozen=True)
class PathSet:
    """Routes between two switches under one scheme; total_count may exceed len(paths)"""

    src: int
    dst: int
    scheme: Scheme
    paths: tuple
    total_count: int = 0

    def __len__(self):
        return len(self.paths)


@dataclass(frozen=True)
class ExpressibilityReport:
    paths: int
    non_expressible: int
    witnesses: tuple  # waypoint switch per path, None when not expressible

    @property
    def fraction(self):
        return self.non_expressible / self.paths if self.paths else 0.0


class NextHopTable:
    """
    All-pairs BFS distances and the per-destination shortest-path DAG.

    Next-hop sets are sorted by switch index.
    """

    def __init__(self, t):
        self.topology = t
        n = t.switch_count
        if t.links:
            rows = [a for a, b in t.links] + [b for a, b in t.links]
            cols = [b for a, b in t.links] + [a for a, b in t.links]
            matrix = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
            dist = shortest_path(matrix, method='D', directed=False, unweighted=True)
        else:
            dist = np.full((n, n), np.inf)
            np.fill_diagonal(dist, 0)

        relevant = [u for u in range(n) if t.degree[u] > 0 or t.servers_at[u] > 0]
        if len(relevant) > 1 and not np.isfinite(dist[np.ix_(relevant, relevant)]).all():
            raise RoutingError(f"topology {t.name or t.kind} is disconnected")

        self.dist = np.where(np.isfinite(dist), dist, -1).astype(np.int64)
        self._cache = {}
        self._lock = threading.Lock()

    def distance(self, u, d):
        value = int(self.dist[u, d])
        if value < 0:
            raise RoutingError(f"switch {d} is unreachable from {u}")
        return value

    def next_hops(self, u, d):
        """Neighbors of u one hop closer to d; empty when u == d"""
        key = (u, d)
        hops = self._cache.get(key)
        if hops is None:
            if u == d:
                hops = ()
            else:
                target = self.distance(u, d) - 1
                hops = tuple(v for v in self.topology.neighbors[u] if self.dist[v, d] == target)
            with self._lock:
                self._cache[key] = hops
        return hops

    def count_shortest_paths(self, src, dst):
        """Exact number of shortest paths, by dynamic programming over the DAG"""
        total = self.distance(src, dst)
        counts = {dst: 1}
        frontier = {dst}
        for level in range(1, total + 1):
            layer = {}
            for v in frontier:
                for u in self.topology.neighbors[v]:
                    if self.dist[u, dst] == level and self.dist[src, u] == total - level:
                        layer[u] = layer.get(u, 0) + counts[v]
            counts.update(layer)
            frontier = set(layer)
        return counts.get(src, 0)


def compute_next_hops(t):
    """BFS-derived ECMP forwarding state; raises RoutingError on a disconnected topology"""
    return NextHopTable(t)


def _check_switch(t, u):
    if not 0 <= u < t.switch_count:
        raise RoutingError(f"switch {u} does not exist")


def shortest_paths(t, src, dst, cap=DEFAULT_PATH_CAP, table=None):
    """All shortest paths in lexicographic hop order, truncated at cap (count stays exact)"""
    _check_switch(t, src)
    _check_switch(t, dst)
    table = table or compute_next_hops(t)
    if src == dst:
        return PathSet(src, dst, Scheme.ecmp(), ((src,),), 1)

    table.distance(src, dst)
    total = table.count_shortest_paths(src, dst)
    paths = []
    stack = [(src,)]
    while stack and len(paths) < cap:
        path = stack.pop()
        u = path[-1]
        if u == dst:
            paths.append(path)
            continue
        for v in reversed(table.next_hops(u, dst)):
            stack.append(path + (v,))

    if total > cap:
        logger.debug("Truncated %d shortest paths %d->%d to %d", total, src, dst, cap)
    return PathSet(src, dst, Scheme.ecmp(), tuple(paths), total)


def k_shortest_paths(t, src, dst, k):
    """First k loop-free paths by (length, hop sequence)"""
    _check_switch(t, src)
    _check_switch(t, dst)
    scheme = Scheme.k_shortest(k)
    if src == dst:
        return PathSet(src, dst, scheme, ((src,),), 1)
    if not nx.has_path(t.graph, src, dst):
        raise RoutingError(f"switch {dst} is unreachable from {src}")

    found = []
    cutoff = None
    # lengths arrive nondecreasing; collect the whole tie group at the k-th length
    for path in nx.shortest_simple_paths(t.graph, src, dst):
        if cutoff is not None and len(path) > cutoff:
            break
        found.append(tuple(path))
        if len(found) == k:
            cutoff = len(path)

    found.sort(key=lambda p: (len(p), p))
    paths = tuple(found[:k])
    return PathSet(src, dst, scheme, paths, len(paths))


def k_disjoint_paths(t, src, dst, k):
    """
    Up to k pairwise edge-disjoint paths of minimum total length.

    Solved as a min-cost flow with unit arc capacities, which is the successive
    shortest augmenting path method; fewer than k paths come back when the
    src-dst edge connectivity is lower.
    """
    _check_switch(t, src)
    _check_switch(t, dst)
    scheme = Scheme.k_disjoint(k)
    if src == dst:
        return PathSet(src, dst, scheme, ((src,),), 1)
    if not nx.has_path(t.graph, src, dst):
        raise RoutingError(f"switch {dst} is unreachable from {src}")

    source = -1
    g = nx.DiGraph()
    g.add_edge(source, src, capacity=k, weight=0)
    for a, b in t.links:
        g.add_edge(a, b, capacity=1, weight=1)
        g.add_edge(b, a, capacity=1, weight=1)

    flow = nx.max_flow_min_cost(g, source, dst)
    value = flow[source][src]

    used = {}
    for a, b in t.links:
        forward, backward = flow[a][b], flow[b][a]
        if forward > backward:
            used.setdefault(a, set()).add(b)
        elif backward > forward:
            used.setdefault(b, set()).add(a)

    paths = []
    for _ in range(value):
        path = [src]
        while path[-1] != dst:
            u = path[-1]
            v = min(used[u])
            used[u].discard(v)
            path.append(v)
        paths.append(tuple(path))

    paths.sort(key=lambda p: (len(p), p))
    return PathSet(src, dst, scheme, tuple(paths), len(paths))


def path_set(t, src, dst, scheme, table=None, cap=DEFAULT_PATH_CAP):
    """Route set for one switch pair under the given scheme"""
    if scheme.name == ECMP:
        return shortest_paths(t, src, dst, cap=cap, table=table)
    if scheme.name == K_SHORTEST:
        return k_shortest_paths(t, src, dst, scheme.k)
    return k_disjoint_paths(t, src, dst, scheme.k)


def is_valid_path(t, path):
    """Simple and every consecutive hop pair is a link"""
    if len(set(path)) != len(path):
        return False
    return all(t.has_link(a, b) for a, b in zip(path, path[1:]))


def expressibility_witness(table, path):
    """
    Waypoint u splitting path into two shortest segments, or None.

    A path that is itself shortest reports its destination.
    """
    hops = len(path) - 1
    src, dst = path[0], path[-1]
    if table.distance(src, dst) == hops:
        return dst
    for i in range(1, hops):
        u = path[i]
        if table.dist[src, u] == i and table.dist[u, dst] == hops - i:
            return u
    return None


def expressibility_report(t, ps, table=None):
    """Fraction of paths in ps that a single waypoint label cannot express"""
    table = table or compute_next_hops(t)
    witnesses = tuple(expressibility_witness(table, path) for path in ps.paths)
    missing = sum(1 for w in witnesses if w is None)
    return ExpressibilityReport(len(witnesses), missing, witnesses)


class RoutingTable:
    """
    Per-topology cache of path sets keyed by (src switch, dst switch).

    Safe to share between threads; a missing entry may be computed twice but the
    result is identical.
    """

    def __init__(self, t, scheme, cap=DEFAULT_PATH_CAP):
        self.topology = t
        self.scheme = scheme
        self.cap = cap
        self.next_hops = compute_next_hops(t)
        self._paths = {}
        self._lock = threading.Lock()

    def paths(self, src, dst):
        key = (src, dst)
        found = self._paths.get(key)
        if found is None:
            found = path_set(self.topology, src, dst, self.scheme, table=self.next_hops, cap=self.cap)
            with self._lock:
                self._paths[key] = found
        return found


def switch_pairs(t, racks_only=True):
    """Ordered pairs of distinct switches (racks only by default)"""
    nodes = t.rack_switches if racks_only else range(t.switch_count)
    return [(a, b) for a, b in itertools.permutations(nodes, 2)]


def average_path_length(t, scheme, pairs=None, routing=None):
    """Mean switch-hop length of the routes the scheme spreads traffic over"""
    routing = routing or RoutingTable(t, scheme)
    pairs = switch_pairs(t) if pairs is None else pairs
    lengths = []
    for src, dst in pairs:
        if scheme.name == ECMP:
            lengths.append(routing.next_hops.distance(src, dst))
            continue
        ps = routing.paths(src, dst)
        lengths.append(sum(len(p) - 1 for p in ps.paths) / len(ps.paths))
    return float(np.mean(lengths)) if lengths else 0.0


def expressibility_sweep(t, scheme, pairs=None, routing=None):
    """Aggregate expressibility over many switch pairs (all ordered pairs by default)"""
    routing = routing or RoutingTable(t, scheme)
    pairs = switch_pairs(t, racks_only=False) if pairs is None else pairs
    total = 0
    missing = 0
    for src, dst in pairs:
        report = expressibility_report(t, routing.paths(src, dst), table=routing.next_hops)
        total += report.paths
        missing += report.non_expressible
    logger.info("Expressibility %s: %d of %d paths need more than one waypoint", scheme, missing, total)
    return ExpressibilityReport(total, missing, ())
