"""
Transient traffic loss under a single link or switch failure, before global
routing reconverges.

Switches avoid failed next hops locally. ECMP flows are lost at the first switch
left with no surviving next hop; source-routed flows avoid paths whose first link
failed and are lost when their chosen path hits the failure further on.
"""
from dataclasses import dataclass

import numpy as np

from src.core.routing import ECMP, RoutingTable
from src.errors import RoutingError
from src.utils.log import get_logger
from src.utils.seeding import derive_seed, numpy_rng, python_rng

logger = get_logger(__name__)

LINK = 'link'
SWITCH = 'switch'

MODES = ('auto', 'exact', 'sampled')
EXACT_PAIR_LIMIT = 10 ** 4
DEFAULT_SAMPLES = 10 ** 6


@dataclass(frozen=True)
class Failure:
    kind: str
    a: int
    b: int = -1

    @classmethod
    def link(cls, a, b):
        return cls(LINK, min(a, b), max(a, b))

    @classmethod
    def switch(cls, u):
        return cls(SWITCH, u)

    def validate(self, t):
        if self.kind == LINK:
            if not t.has_link(self.a, self.b):
                raise RoutingError(f"cannot fail missing link {self.a}-{self.b}")
        elif self.kind == SWITCH:
            if not 0 <= self.a < t.switch_count:
                raise RoutingError(f"cannot fail missing switch {self.a}")
        else:
            raise RoutingError(f"unknown failure kind '{self.kind}'")
        return self

    def kills_hop(self, u, v):
        """Whether the hop u -> v crosses the failed element"""
        if self.kind == SWITCH:
            return v == self.a or u == self.a
        return (min(u, v), max(u, v)) == (self.a, self.b)

    def hits_path(self, path):
        return any(self.kills_hop(u, v) for u, v in zip(path, path[1:]))

    @property
    def label(self):
        return f"{self.a}-{self.b}" if self.kind == LINK else str(self.a)

    def __str__(self):
        return f"{self.kind}:{self.label}"


@dataclass(frozen=True)
class LossReport:
    """rows holds (element label, P[L|F]) per evaluated element"""

    scheme: str
    kind: str
    rows: tuple
    p_loss_given_failure: float
    lam: float
    element_count: int
    mode: str

    @property
    def expected_loss(self):
        return self.p_loss_given_failure * self.lam * self.element_count


def surviving_servers(t, failure):
    """Servers whose hosting switch is still up"""
    dead = failure.a if failure.kind == SWITCH else None
    return [s for s in range(t.server_count) if t.rack_of_server[s] != dead]


def surviving_next_hops(table, failure, u, d):
    return tuple(v for v in table.next_hops(u, d) if not failure.kills_hop(u, v))


def ecmp_loss_to(table, failure, d):
    """
    P(lost) for a flow at each switch heading to d under per-switch uniform hashing.

    Computed over the shortest-path DAG in order of distance to d.
    """
    t = table.topology
    order = sorted((u for u in range(t.switch_count) if table.dist[u, d] >= 0), key=lambda u: table.dist[u, d])
    loss = {}
    for u in order:
        if u == d:
            loss[u] = 0.0
            continue
        alive = surviving_next_hops(table, failure, u, d)
        loss[u] = 1.0 if not alive else sum(loss[v] for v in alive) / len(alive)
    return loss


def dead_ends(table, failure, d):
    """Switches that still route toward d but have lost every next hop"""
    t = table.topology
    return [u for u in range(t.switch_count)
            if u != d and table.dist[u, d] > 0 and not surviving_next_hops(table, failure, u, d)]


def _failure_touches(table, failure, d):
    if failure.kind == SWITCH:
        return True
    return abs(int(table.dist[failure.a, d]) - int(table.dist[failure.b, d])) == 1


def source_routed_loss(paths, failure):
    """Fraction of first-hop-healthy paths hit later on; 1.0 when every first hop failed"""
    healthy = [p for p in paths if len(p) < 2 or not failure.kills_hop(p[0], p[1])]
    if not healthy:
        return 1.0
    return sum(1 for p in healthy if failure.hits_path(p[1:])) / len(healthy)


def _pair_weights(t, servers):
    """Ordered distinct server pair counts per (src switch, dst switch)"""
    per_switch = {}
    for s in servers:
        rack = t.rack_of_server[s]
        per_switch[rack] = per_switch.get(rack, 0) + 1
    weights = {}
    for a, na in per_switch.items():
        for b, nb in per_switch.items():
            weights[(a, b)] = na * (na - 1) if a == b else na * nb
    return weights


def _exact_loss(t, routing, failure, servers):
    weights = _pair_weights(t, servers)
    total = sum(weights.values())
    if total == 0:
        return 0.0

    lost = 0.0
    if routing.scheme.name == ECMP:
        destinations = sorted({b for _, b in weights})
        for d in destinations:
            if not _failure_touches(routing.next_hops, failure, d):
                continue
            loss = ecmp_loss_to(routing.next_hops, failure, d)
            lost += sum(w * loss[a] for (a, b), w in weights.items() if b == d and a != d)
    else:
        for (a, b), w in weights.items():
            if a != b and w:
                lost += w * source_routed_loss(routing.paths(a, b).paths, failure)
    return lost / total


def _sample_pairs(servers, samples, rng):
    servers = np.asarray(servers)
    src = rng.integers(0, len(servers), samples)
    dst = rng.integers(0, len(servers) - 1, samples)
    dst = np.where(dst >= src, dst + 1, dst)
    return servers[src], servers[dst]


def _sampled_loss(t, routing, failure, servers, samples, seed):
    rng = numpy_rng(seed)
    src, dst = _sample_pairs(servers, samples, rng)
    racks = np.asarray(t.rack_of_server)
    a_all, b_all = racks[src], racks[dst]
    lost = 0

    if routing.scheme.name == ECMP:
        table = routing.next_hops
        for d in np.unique(b_all):
            d = int(d)
            position = a_all[b_all == d]
            if not _failure_touches(table, failure, d):
                continue
            alive = {u: surviving_next_hops(table, failure, u, d)
                     for u in range(t.switch_count) if table.dist[u, d] > 0}
            width = max([1] + [len(v) for v in alive.values()])
            hops = np.full((t.switch_count, width), -1)
            counts = np.zeros(t.switch_count, dtype=int)
            for u, nexts in alive.items():
                counts[u] = len(nexts)
                hops[u, :len(nexts)] = nexts
            walking = position != d
            dropped = np.zeros(len(position), dtype=bool)
            while walking.any():
                current = position[walking]
                stuck = counts[current] == 0
                index = np.flatnonzero(walking)
                dropped[index[stuck]] = True
                walking[index[stuck]] = False
                moving = index[~stuck]
                at = position[moving]
                pick = (rng.random(len(moving)) * counts[at]).astype(int)
                position[moving] = hops[at, pick]
                walking[moving] = position[moving] != d
            lost += int(dropped.sum())
    else:
        cache = {}
        probabilities = np.zeros(samples)
        for i, (a, b) in enumerate(zip(a_all.tolist(), b_all.tolist())):
            if a == b:
                continue
            if (a, b) not in cache:
                cache[(a, b)] = source_routed_loss(routing.paths(a, b).paths, failure)
            probabilities[i] = cache[(a, b)]
        lost = int((rng.random(samples) < probabilities).sum())
    return lost / samples


def loss_given_failure(t, scheme, failure, mode='auto', samples=DEFAULT_SAMPLES, seed=0, routing=None):
    """
    P[L|F] over uniform ordered pairs of distinct servers on surviving switches.

    exact enumerates every pair and hash outcome; sampled draws `samples` pairs;
    auto picks exact below EXACT_PAIR_LIMIT ordered pairs.
    """
    if mode not in MODES:
        raise RoutingError(f"unknown loss mode '{mode}'; choose from {MODES}")
    failure.validate(t)
    routing = routing or RoutingTable(t, scheme)
    servers = surviving_servers(t, failure)
    if len(servers) < 2:
        return 0.0

    pairs = len(servers) * (len(servers) - 1)
    if mode == 'exact' or (mode == 'auto' and pairs < EXACT_PAIR_LIMIT):
        return _exact_loss(t, routing, failure, servers)
    return _sampled_loss(t, routing, failure, servers, samples, derive_seed(seed, str(failure)))


def failure_elements(t, kind):
    if kind == LINK:
        return [Failure.link(a, b) for a, b in t.links]
    if kind == SWITCH:
        return [Failure.switch(u) for u in range(t.switch_count) if t.degree[u] > 0]
    raise RoutingError(f"unknown failure kind '{kind}'")


def expected_transient_loss(t, scheme, kind, lam, mode='auto', samples=DEFAULT_SAMPLES, seed=0,
                            max_elements=None, routing=None):
    """
    Average P[L|F] over every element of the kind (or a seeded sample of max_elements)
    and scale by lam x element count.
    """
    if not 0.0 <= lam <= 1.0:
        raise RoutingError(f"failure probability must lie in [0, 1], got {lam}")
    elements = failure_elements(t, kind)
    element_count = len(elements)
    if max_elements and element_count > max_elements:
        chosen = python_rng(derive_seed(seed, 'elements', kind)).sample(range(element_count), max_elements)
        elements = [elements[i] for i in sorted(chosen)]

    routing = routing or RoutingTable(t, scheme)
    rows = tuple((f.label, loss_given_failure(t, scheme, f, mode, samples, seed, routing)) for f in elements)
    average = sum(p for _, p in rows) / len(rows) if rows else 0.0
    logger.info("%s %s failures on %s: avg P[L|F] %.6f over %d of %d elements",
                scheme, kind, t.name or t.kind, average, len(rows), element_count)
    return LossReport(str(scheme), kind, rows, average, lam, element_count, mode)
