"""
Flow-level simulation: per-flow path binding, max-min fair rates by progressive
water-filling, fluid flow-completion times and fairness metrics.

Rates are fractions of the link rate; 1.0 is 1 Gbps.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import csr_matrix, hstack, vstack

from src.core.routing import ECMP, RoutingTable
from src.errors import SimulationError
from src.utils.log import get_logger
from src.utils.seeding import hash_choice

logger = get_logger(__name__)

LINK_RATE_BPS = 1e9
BYTES_PER_SECOND = LINK_RATE_BPS / 8  # at rate 1.0
EPSILON = 1e-9
PERCENTILES = (50, 90, 99)

_SATURATION_TOLERANCE = 1e-12
_FINISH_TOLERANCE = 1e-9
_LEVEL_SLACK = 1e-9
_DUAL_TOLERANCE = 1e-9


@dataclass(frozen=True)
class FlowRoute:
    """Switch-level path of one flow; server access links are implicit at both ends"""

    flow_id: int
    src: int
    dst: int
    path: tuple

    def resources(self):
        """Directed capacity units crossed: uplink, switch hops, downlink"""
        hops = [('up', self.src)]
        hops.extend(zip(self.path, self.path[1:]))
        hops.append(('down', self.dst))
        return hops


@dataclass(frozen=True, eq=False)
class Allocation:
    flow_ids: tuple
    rates: np.ndarray = field(repr=False)

    def __len__(self):
        return len(self.flow_ids)

    def rate_of(self, flow_id):
        return float(self.rates[self.flow_ids.index(flow_id)])

    def mean(self):
        return float(np.mean(self.rates)) if len(self.rates) else 0.0

    def median(self):
        return float(np.median(self.rates)) if len(self.rates) else 0.0

    def items(self):
        return zip(self.flow_ids, (float(r) for r in self.rates))


@dataclass(frozen=True, eq=False)
class FctResult:
    """completion holds durations (finish - start); finish holds absolute finish times"""

    flow_ids: tuple
    completion: np.ndarray = field(repr=False)
    finish: np.ndarray = field(repr=False)
    delivered: np.ndarray = field(repr=False)

    def percentile(self, q):
        return float(np.percentile(self.completion, q))

    def summary(self):
        return tuple(self.percentile(q) for q in PERCENTILES)

    def items(self):
        return zip(self.flow_ids, (float(c) for c in self.completion))


def _ecmp_path(next_hops, src_switch, dst_switch, flow_key, seed):
    path = [src_switch]
    u = src_switch
    while u != dst_switch:
        hops = next_hops.next_hops(u, dst_switch)
        u = hops[hash_choice(seed, (u, flow_key), len(hops))]
        path.append(u)
    return tuple(path)


class _PathRotation:
    """Round-robin over each switch pair's path set from a seeded starting offset"""

    def __init__(self, routing, seed):
        self.routing = routing
        self.seed = seed
        self._turn = {}

    def take(self, a, b, count=1):
        paths = self.routing.paths(a, b).paths
        turn = self._turn.get((a, b))
        if turn is None:
            turn = hash_choice(self.seed, ('path', a, b), len(paths))
        self._turn[(a, b)] = turn + 1
        return [paths[(turn + i) % len(paths)] for i in range(min(count, len(paths)))]


def assign_paths(t, p, scheme, seed=0, routing=None):
    """
    Bind every flow to one switch path.

    ECMP hashes (seed, switch, flow id) at each hop. Source-routed schemes deal the
    flows of a switch pair over its paths in turn, so k paths split the pair's flows
    evenly.
    """
    routing = routing or RoutingTable(t, scheme)
    rotation = _PathRotation(routing, seed)
    routes = []
    for flow_id, flow in enumerate(p.flows):
        a = t.rack_of_server[flow.src]
        b = t.rack_of_server[flow.dst]
        if a == b:
            path = (a,)
        elif scheme.name == ECMP:
            path = _ecmp_path(routing.next_hops, a, b, flow_id, seed)
        else:
            path = rotation.take(a, b)[0]
        routes.append(FlowRoute(flow_id, flow.src, flow.dst, path))
    return routes


def assign_subflows(t, p, scheme, subflows, seed=0, routing=None):
    """
    Split every flow into up to `subflows` routes that share its flow id.

    ECMP subflows hash independently (subflow 0 follows assign_paths); source-routed
    subflows take distinct paths of the pair's set. Duplicate paths collapse.
    """
    if subflows < 1:
        raise SimulationError(f"a flow needs at least one subflow, got {subflows}")
    routing = routing or RoutingTable(t, scheme)
    rotation = _PathRotation(routing, seed)
    routes = []
    for flow_id, flow in enumerate(p.flows):
        a = t.rack_of_server[flow.src]
        b = t.rack_of_server[flow.dst]
        if a == b:
            paths = [(a,)]
        elif scheme.name == ECMP:
            keys = [flow_id] + [(flow_id, i) for i in range(1, subflows)]
            paths = [_ecmp_path(routing.next_hops, a, b, key, seed) for key in keys]
        else:
            paths = rotation.take(a, b, subflows)
        for path in dict.fromkeys(paths):
            routes.append(FlowRoute(flow_id, flow.src, flow.dst, path))
    return routes


def _incidence(t, routes):
    """Sparse resource x flow incidence matrix and the capacity of each resource"""
    index = {}
    capacities = []
    rows = []
    cols = []
    for column, route in enumerate(routes):
        for resource in route.resources():
            row = index.get(resource)
            if row is None:
                row = index[resource] = len(capacities)
                server_link = resource[0] in ('up', 'down')
                capacities.append(t.server_link_capacity if server_link else t.link_capacity)
            rows.append(row)
            cols.append(column)
    matrix = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(capacities), len(routes)))
    return matrix, np.asarray(capacities, dtype=float)


def maxmin_allocate(t, routes):
    """Max-min fair rates for fixed single-path routes by progressive filling"""
    routes = list(routes)
    flow_ids = tuple(r.flow_id for r in routes)
    if not routes:
        return Allocation(flow_ids, np.zeros(0))

    matrix, capacities = _incidence(t, routes)
    transposed = matrix.T.tocsr()
    rates = np.zeros(len(routes))
    remaining = capacities.copy()
    active = np.ones(len(routes), dtype=bool)

    while active.any():
        counts = matrix @ active.astype(float)
        loaded = counts > 0
        shares = np.full(len(capacities), np.inf)
        shares[loaded] = remaining[loaded] / counts[loaded]
        increment = float(shares.min())

        rates[active] += increment
        remaining[loaded] -= counts[loaded] * increment
        saturated = loaded & ((shares <= increment * (1 + _SATURATION_TOLERANCE))
                              | (remaining <= _SATURATION_TOLERANCE * capacities))
        frozen = (transposed @ saturated.astype(float)) > 0
        active &= ~frozen

    return Allocation(flow_ids, rates)


def multipath_maxmin_allocate(t, routes):
    """
    Max-min fair flow rates when a flow may spread over all routes carrying its id.

    Each round solves an LP for the highest common level of the unfixed flows, then
    fixes the flows whose level constraint has a positive dual: no feasible split lifts
    them above that level.
    """
    routes = list(routes)
    if not routes:
        return Allocation((), np.zeros(0))
    flow_ids = tuple(dict.fromkeys(r.flow_id for r in routes))
    row_of = {flow_id: i for i, flow_id in enumerate(flow_ids)}
    subflows = len(routes)
    owners = [row_of[r.flow_id] for r in routes]
    membership = csr_matrix((np.ones(subflows), (owners, np.arange(subflows))), shape=(len(flow_ids), subflows))

    matrix, capacities = _incidence(t, routes)
    capacity_rows = hstack([matrix, csr_matrix((len(capacities), 1))])
    objective = np.zeros(subflows + 1)
    objective[-1] = -1.0
    levels = np.zeros(len(flow_ids))
    fixed = np.zeros(len(flow_ids), dtype=bool)
    rounds = 0

    while not fixed.all():
        free = np.flatnonzero(~fixed)
        done = np.flatnonzero(fixed)
        blocks = [capacity_rows, hstack([-membership[free], csr_matrix(np.ones((len(free), 1)))])]
        limits = [capacities, np.zeros(len(free))]
        if len(done):
            blocks.append(hstack([-membership[done], csr_matrix((len(done), 1))]))
            limits.append(-levels[done] * (1 - _LEVEL_SLACK))
        result = linprog(objective, A_ub=vstack(blocks, format='csr'), b_ub=np.concatenate(limits),
                         bounds=(0, None), method='highs')
        if result.status != 0:
            raise SimulationError(f"multipath allocation failed: {result.message}")

        level = -float(result.fun)
        duals = -np.asarray(result.ineqlin.marginals[len(capacities):len(capacities) + len(free)])
        blocking = free[duals > _DUAL_TOLERANCE]
        if not len(blocking):
            blocking = free
        levels[blocking] = level
        fixed[blocking] = True
        rounds += 1

    logger.debug("Multipath max-min over %d flows (%d subflows) took %d rounds", len(flow_ids), subflows, rounds)
    return Allocation(flow_ids, levels)


def fct_simulate(t, routes, pattern):
    """
    Event-driven fluid simulation; rates are recomputed at every arrival and departure.

    Flows without a finite size raise SimulationError.
    """
    routes = list(routes)
    flows = [pattern.flows[r.flow_id] for r in routes]
    for route, flow in zip(routes, flows):
        if not flow.bounded:
            raise SimulationError(f"flow {route.flow_id} is unbounded; completion time is undefined")

    count = len(routes)
    sizes = np.array([f.size for f in flows], dtype=float)
    starts = np.array([f.start for f in flows], dtype=float)
    remaining = sizes.copy()
    delivered = np.zeros(count)
    finish = np.full(count, np.nan)

    pending = sorted(range(count), key=lambda i: (starts[i], i))
    cursor = 0
    active = []
    now = 0.0
    events = 0

    while cursor < count or active:
        if not active:
            now = max(now, starts[pending[cursor]])
        while cursor < count and starts[pending[cursor]] <= now:
            active.append(pending[cursor])
            cursor += 1

        allocation = maxmin_allocate(t, [routes[i] for i in active])
        speeds = allocation.rates * BYTES_PER_SECOND
        if (speeds <= 0).any():
            raise SimulationError("an active flow received zero rate")
        to_finish = remaining[active] / speeds
        step = float(to_finish.min())
        arrival = starts[pending[cursor]] if cursor < count else np.inf
        if arrival - now <= step:
            step = arrival - now
            now = arrival
        else:
            now += step
        moved = speeds * step
        still_active = []
        for position, flow_index in enumerate(active):
            if to_finish[position] <= step * (1 + _FINISH_TOLERANCE):
                delivered[flow_index] += remaining[flow_index]
                remaining[flow_index] = 0.0
                finish[flow_index] = now
            else:
                delivered[flow_index] += moved[position]
                remaining[flow_index] -= moved[position]
                still_active.append(flow_index)
        active = still_active
        events += 1

    logger.debug("Fluid simulation of %d flows finished after %d events at %.6fs", count, events, now)
    return FctResult(tuple(r.flow_id for r in routes), finish - starts, finish, delivered)


def jain_index(a):
    """(sum x)^2 / (n * sum x^2)"""
    rates = np.asarray(a.rates if isinstance(a, Allocation) else a, dtype=float)
    if len(rates) == 0:
        raise SimulationError("Jain's index needs at least one flow")
    squares = float(np.sum(rates ** 2))
    if squares == 0:
        raise SimulationError("Jain's index is undefined for an all-zero allocation")
    return float(np.sum(rates)) ** 2 / (len(rates) * squares)


def rate_cdf(a):
    """Sorted (rate, cumulative fraction of flows) points"""
    rates = np.sort(np.asarray(a.rates, dtype=float))
    fractions = np.arange(1, len(rates) + 1) / len(rates) if len(rates) else rates
    return [(float(r), float(f)) for r, f in zip(rates, fractions)]


def link_loads(t, routes, allocation):
    """Total rate crossing each directed resource"""
    loads = {}
    for route, rate in zip(routes, allocation.rates):
        for resource in route.resources():
            loads[resource] = loads.get(resource, 0.0) + float(rate)
    return loads
