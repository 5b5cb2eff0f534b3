"""
Balanced k-way partitioning (cross-cluster link counts) and edge expansion of
switch graphs, with the cluster-merge upper bound on expansion.
"""
import itertools
from dataclasses import dataclass

import numpy as np

from src.errors import ExpansionError
from src.utils.log import get_logger
from src.utils.seeding import derive_seed, numpy_rng

logger = get_logger(__name__)

EXACT_LIMIT = 20
DEFAULT_BUDGET = 1000
_IMPROVEMENT = 1e-12


@dataclass(frozen=True)
class Partition:
    cluster_of: tuple
    k: int

    def __post_init__(self):
        sizes = self.sizes
        if any(c < 0 or c >= self.k for c in self.cluster_of):
            raise ExpansionError(f"cluster id outside [0, {self.k})")
        if sizes and max(sizes) - min(sizes) > 1:
            raise ExpansionError(f"unbalanced partition, cluster sizes {sizes}")

    @property
    def sizes(self):
        counts = [0] * self.k
        for c in self.cluster_of:
            counts[c] += 1
        return tuple(counts)

    def members(self, cluster):
        return [u for u, c in enumerate(self.cluster_of) if c == cluster]


@dataclass(frozen=True)
class ExpansionReport:
    """Best cut found: h_upper = boundary(witness_set) / |witness_set|"""

    h_upper: float
    witness_set: frozenset
    expansion_bound: float
    d: float
    n: int
    k: int
    f: float
    exact: bool


def adjacency_matrix(t):
    a = np.zeros((t.switch_count, t.switch_count), dtype=np.int64)
    for u, v in t.links:
        a[u, v] = a[v, u] = 1
    return a


def _check_k(t, k):
    if k < 1 or k > t.switch_count:
        raise ExpansionError(f"cluster count must lie in [1, {t.switch_count}], got {k}")


def random_balanced_partition(t, k, seed=0):
    """Seeded random assignment with cluster sizes differing by at most one"""
    _check_k(t, k)
    order = numpy_rng(seed).permutation(t.switch_count)
    cluster_of = [0] * t.switch_count
    for position, u in enumerate(order):
        cluster_of[int(u)] = position % k
    return Partition(tuple(cluster_of), k)


def cross_links(t, p):
    return sum(1 for u, v in t.links if p.cluster_of[u] != p.cluster_of[v])


def cross_cluster_fraction(t, p):
    """|cross-cluster links| / |links|"""
    if not t.links:
        return 0.0
    return cross_links(t, p) / len(t.links)


def _swap(adjacency, conn, clusters, u, v):
    cu, cv = int(clusters[u]), int(clusters[v])
    conn[:, cu] += adjacency[v] - adjacency[u]
    conn[:, cv] += adjacency[u] - adjacency[v]
    clusters[u], clusters[v] = cv, cu


def _swap_gains(adjacency, conn, clusters):
    """gain[u, v]: cross links removed by exchanging u and v; -inf within a cluster"""
    internal = conn[np.arange(len(clusters)), clusters]
    toward = conn[:, clusters]
    gain = (toward - internal[:, None] + toward.T - internal[None, :] - 2 * adjacency).astype(float)
    gain[clusters[:, None] == clusters[None, :]] = -np.inf
    return gain


def kl_refine(adjacency, cluster_of, k, max_passes=50):
    """
    Kernighan-Lin refinement with pair swaps only, so cluster sizes never change.

    Each pass swaps unlocked pairs greedily (negative gains allowed), then keeps
    the best prefix of the pass. Returns the refined assignment and the cross-link
    count after every pass, which never increases.
    """
    clusters = np.asarray(cluster_of, dtype=np.int64).copy()
    n = len(clusters)
    onehot = np.zeros((n, k), dtype=np.int64)
    onehot[np.arange(n), clusters] = 1
    conn = adjacency @ onehot
    cross = (int(adjacency.sum()) - int(conn[np.arange(n), clusters].sum())) // 2 if n else 0
    history = [cross]

    for _ in range(max_passes):
        locked = np.zeros(n, dtype=bool)
        swaps = []
        running = 0
        best_total = 0
        best_length = 0
        while True:
            gain = _swap_gains(adjacency, conn, clusters)
            gain[locked, :] = -np.inf
            gain[:, locked] = -np.inf
            best = int(np.argmax(gain))
            u, v = divmod(best, n)
            if not np.isfinite(gain[u, v]):
                break
            _swap(adjacency, conn, clusters, u, v)
            locked[u] = locked[v] = True
            swaps.append((u, v))
            running += int(gain[u, v])
            if running > best_total:
                best_total, best_length = running, len(swaps)

        for u, v in reversed(swaps[best_length:]):
            _swap(adjacency, conn, clusters, u, v)
        if best_total <= 0:
            break
        cross -= best_total
        history.append(cross)

    return tuple(int(c) for c in clusters), history


def partition_graph(t, k, seed=0, restarts=1):
    """Balanced partition minimizing cross-cluster links: random starts refined by KL swaps"""
    _check_k(t, k)
    if k == 1:
        return Partition((0,) * t.switch_count, 1)

    adjacency = adjacency_matrix(t)
    best = None
    best_cross = None
    for attempt in range(max(1, restarts)):
        start = random_balanced_partition(t, k, derive_seed(seed, 'partition', k, attempt))
        refined, history = kl_refine(adjacency, start.cluster_of, k)
        logger.debug("Partition k=%d attempt %d: %d -> %d cross links in %d passes",
                     k, attempt, history[0], history[-1], len(history) - 1)
        if best_cross is None or history[-1] < best_cross:
            best, best_cross = refined, history[-1]
    return Partition(best, k)


def expansion_bound(d, k, f):
    """Upper bound d*k*f / (2(k-1)) on edge expansion from a k-way partition"""
    if d < 1:
        raise ExpansionError(f"degree must be >= 1, got {d}")
    if k < 2 or k % 2:
        raise ExpansionError(f"cluster count must be even and >= 2, got {k}")
    if not 0.0 <= f <= 1.0:
        raise ExpansionError(f"cross-cluster fraction must lie in [0, 1], got {f}")
    return d * k * f / (2 * (k - 1))


def boundary_size(t, members):
    members = set(members)
    return sum(1 for u, v in t.links if (u in members) != (v in members))


def cluster_merge_cuts(t, p):
    """(boundary/|S|, S) for every union S of k/2 clusters"""
    if p.k < 2 or p.k % 2:
        raise ExpansionError(f"cluster merges need an even cluster count, got {p.k}")
    cuts = []
    for chosen in itertools.combinations(range(p.k), p.k // 2):
        chosen = set(chosen)
        members = frozenset(u for u, c in enumerate(p.cluster_of) if c in chosen)
        if members:
            cuts.append((boundary_size(t, members) / len(members), members))
    return cuts


def _popcount(masks, n):
    counts = np.zeros(len(masks), dtype=np.int64)
    for bit in range(n):
        counts += (masks >> bit) & 1
    return counts


def exact_edge_expansion(t):
    """
    Brute force over every nonempty S with |S| <= n/2; returns (h, S).

    The bound is inclusive: |S| = n/2 counts, so h(4-cycle) = 1 and h(K4) = 2.
    """
    n = t.switch_count
    if n < 2:
        raise ExpansionError("edge expansion needs at least two switches")
    if n > EXACT_LIMIT:
        raise ExpansionError(f"exact edge expansion is limited to {EXACT_LIMIT} switches, got {n}")

    masks = np.arange(1, 1 << n, dtype=np.int64)
    sizes = _popcount(masks, n)
    keep = sizes <= n // 2
    masks, sizes = masks[keep], sizes[keep]
    boundary = np.zeros(len(masks), dtype=np.int64)
    for u, v in t.links:
        boundary += ((masks >> u) & 1) ^ ((masks >> v) & 1)
    ratios = boundary / sizes
    best = int(np.argmin(ratios))
    witness = frozenset(u for u in range(n) if (int(masks[best]) >> u) & 1)
    return float(ratios[best]), witness


def _local_search(t, adjacency, members):
    """Single-vertex moves while the ratio improves and 1 <= |S| <= n/2"""
    n = t.switch_count
    degree = adjacency.sum(axis=1)
    inside = np.zeros(n, dtype=bool)
    inside[list(members)] = True
    boundary = boundary_size(t, members)
    size = int(inside.sum())

    for _ in range(10 * n):
        touching = adjacency @ inside.astype(np.int64)
        delta = np.where(inside, 2 * touching - degree, degree - 2 * touching)
        new_size = np.where(inside, size - 1, size + 1)
        valid = (new_size >= 1) & (new_size <= n // 2)
        if not valid.any():
            break
        ratios = np.full(n, np.inf)
        ratios[valid] = (boundary + delta[valid]) / new_size[valid]
        u = int(np.argmin(ratios))
        if ratios[u] >= boundary / size - _IMPROVEMENT:
            break
        boundary += int(delta[u])
        size = int(new_size[u])
        inside[u] = not inside[u]

    witness = frozenset(int(u) for u in np.flatnonzero(inside))
    return boundary / size, witness


def _smaller_side(n, members):
    if len(members) <= n // 2:
        return members
    return frozenset(range(n)) - members


def estimate_edge_expansion(t, budget=DEFAULT_BUDGET, seed=0, k=2, restarts=1):
    """
    Exact h(G) for up to EXACT_LIMIT switches, otherwise an upper bound from random
    subsets, cluster-merge cuts of a k-way partition and greedy local search.

    The cross-fraction bound is evaluated on the same partition (k must be even).
    """
    n = t.switch_count
    if not t.is_connected():
        raise ExpansionError("edge expansion needs a connected switch graph")
    if n < 2:
        raise ExpansionError("edge expansion needs at least two switches")

    partition = partition_graph(t, k, seed, restarts)
    f = cross_cluster_fraction(t, partition)
    d = 2 * len(t.links) / n
    bound = expansion_bound(d, k, f)

    if n <= EXACT_LIMIT:
        h, witness = exact_edge_expansion(t)
        return ExpansionReport(h, witness, bound, d, n, k, f, True)

    candidates = []
    rng = numpy_rng(derive_seed(seed, 'subsets'))
    for _ in range(budget):
        size = int(rng.integers(1, n // 2 + 1))
        members = frozenset(int(u) for u in rng.choice(n, size, replace=False))
        candidates.append((boundary_size(t, members) / size, members))
    for _, members in cluster_merge_cuts(t, partition):
        members = _smaller_side(n, members)
        if members:
            candidates.append((boundary_size(t, members) / len(members), members))

    h, witness = min(candidates, key=lambda item: (item[0], sorted(item[1])))
    searched = _local_search(t, adjacency_matrix(t), witness)
    if searched[0] < h:
        h, witness = searched
    logger.info("Edge expansion of %s: h <= %.4f (|S| = %d), partition bound %.4f",
                t.name or t.kind, h, len(witness), bound)
    return ExpansionReport(h, witness, bound, d, n, k, f, False)
