"""
Datacenter fabric construction: fat trees, leaf-spines and random regular graphs
built from the same equipment, plus the NSR / UDF port arithmetic.
"""
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property

import networkx as nx

from src.errors import TopologyError
from src.utils.log import get_logger
from src.utils.seeding import python_rng

logger = get_logger(__name__)

FAT_TREE = 'FatTree'
LEAF_SPINE = 'LeafSpine'
RRG = 'Rrg'
IMPORTED = 'Imported'

SUPPORTED_OVERSUB = (1, 2, 4)
PORT_CEILING = 256  # largest switch radix accepted for leaf-spine parameters
LINK_RATE = 1.0

# Repair budget for the random graph builder, in swap attempts per edge
_SWAP_ATTEMPTS_PER_EDGE = 200
_PAIRING_RESTARTS = 20


@dataclass(frozen=True)
class TopologySpec:
    """Parameters of a fabric: FatTree{k, oversub}, LeafSpine{x, y} or Rrg{base, seed}"""

    kind: str
    k: int = 0
    oversub: int = 1
    x: int = 0
    y: int = 0
    base: 'TopologySpec' = None
    seed: int = 0

    @classmethod
    def fat_tree(cls, k, oversub=1):
        return cls(FAT_TREE, k=k, oversub=oversub)

    @classmethod
    def leaf_spine(cls, x, y):
        return cls(LEAF_SPINE, x=x, y=y)

    @classmethod
    def rrg(cls, base, seed=0):
        return cls(RRG, base=base, seed=seed)

    def validate(self):
        """Raise TopologyError when the parameters are not admissible"""
        if self.kind == FAT_TREE:
            if self.k < 4 or self.k % 2:
                raise TopologyError(f"fat tree needs an even k >= 4, got k={self.k}")
            if self.oversub not in SUPPORTED_OVERSUB:
                raise TopologyError(f"unsupported over-subscription {self.oversub}; use one of {SUPPORTED_OVERSUB}")
        elif self.kind == LEAF_SPINE:
            if self.x < 1 or self.y < 1:
                raise TopologyError(f"leaf-spine needs x >= 1 and y >= 1, got x={self.x}, y={self.y}")
            if self.x + self.y > PORT_CEILING:
                raise TopologyError(f"leaf-spine radix x+y={self.x + self.y} exceeds the port ceiling {PORT_CEILING}")
        elif self.kind == RRG:
            if self.base is None or self.base.kind not in (FAT_TREE, LEAF_SPINE):
                raise TopologyError("random graph must be rewired from a fat tree or leaf-spine")
            self.base.validate()
        else:
            raise TopologyError(f"unknown topology kind: {self.kind}")
        return self

    def __str__(self):
        if self.kind == FAT_TREE:
            return f"fattree:k={self.k},oversub={self.oversub}"
        if self.kind == LEAF_SPINE:
            return f"leafspine:x={self.x},y={self.y}"
        return f"rrg:{self.base},seed={self.seed}"

    @classmethod
    def parse(cls, text):
        """Parse 'fattree:k=8,oversub=4', 'leafspine:x=24,y=8' or 'rrg:<base>,seed=N'"""
        text = (text or '').strip()
        name, _, rest = text.partition(':')
        name = name.strip().lower()

        if name == 'rrg':
            params = [p.strip() for p in rest.split(',') if p.strip()]
            seed = 0
            base_params = []
            for param in params:
                if param.startswith('seed='):
                    seed = _parse_int(param[5:], text)
                else:
                    base_params.append(param)
            base = cls.parse(','.join(base_params))
            return cls.rrg(base, seed).validate()

        values = {}
        for param in rest.split(','):
            if not param.strip():
                continue
            key, sep, value = param.partition('=')
            if not sep:
                raise TopologyError(f"malformed topology parameter '{param}' in '{text}'")
            values[key.strip()] = _parse_int(value, text)

        if name in ('fattree', 'fat_tree', 'fat-tree'):
            unknown = set(values) - {'k', 'oversub'}
            if unknown or 'k' not in values:
                raise TopologyError(f"fat tree spec needs k (and optional oversub): '{text}'")
            return cls.fat_tree(values['k'], values.get('oversub', 1)).validate()
        if name in ('leafspine', 'leaf_spine', 'leaf-spine'):
            if set(values) != {'x', 'y'}:
                raise TopologyError(f"leaf-spine spec needs exactly x and y: '{text}'")
            return cls.leaf_spine(values['x'], values['y']).validate()
        raise TopologyError(f"unknown topology spec: '{text}'")


def _parse_int(value, text):
    try:
        return int(value.strip())
    except ValueError:
        raise TopologyError(f"non-integer value '{value}' in topology spec '{text}'")


@dataclass(frozen=True)
class Topology:
    """
    Immutable switch graph with per-switch server counts.

    Servers are numbered contiguously switch by switch, so the servers of switch u
    are server_offset[u] .. server_offset[u] + servers_at[u] - 1. All links (network and
    server access) run at LINK_RATE.
    """

    kind: str
    ports_per_switch: tuple
    servers_at: tuple
    links: tuple
    radix: int
    roles: tuple = ()
    name: str = ''
    server_link_capacity: float = LINK_RATE
    link_capacity: float = field(default=LINK_RATE)

    def __post_init__(self):
        n = len(self.ports_per_switch)
        if len(self.servers_at) != n:
            raise TopologyError("servers_at and ports_per_switch differ in length")
        if self.roles and len(self.roles) != n:
            raise TopologyError("roles and ports_per_switch differ in length")

        seen = set()
        for a, b in self.links:
            if a == b:
                raise TopologyError(f"self-loop at switch {a}")
            if not (0 <= a < n and 0 <= b < n):
                raise TopologyError(f"link ({a}, {b}) references a missing switch")
            key = (min(a, b), max(a, b))
            if key in seen:
                raise TopologyError(f"parallel link between {key[0]} and {key[1]}")
            seen.add(key)

        degree = self.degree
        for u in range(n):
            if self.servers_at[u] < 0:
                raise TopologyError(f"negative server count at switch {u}")
            if self.servers_at[u] + degree[u] > self.ports_per_switch[u]:
                raise TopologyError(
                    f"switch {u} uses {self.servers_at[u]} server + {degree[u]} network ports "
                    f"but has only {self.ports_per_switch[u]}")

    @property
    def switch_count(self):
        return len(self.ports_per_switch)

    @cached_property
    def degree(self):
        """Network degree of every switch"""
        degree = [0] * len(self.ports_per_switch)
        for a, b in self.links:
            degree[a] += 1
            degree[b] += 1
        return tuple(degree)

    @cached_property
    def server_count(self):
        return sum(self.servers_at)

    @cached_property
    def server_offset(self):
        offsets = []
        total = 0
        for count in self.servers_at:
            offsets.append(total)
            total += count
        return tuple(offsets)

    @cached_property
    def rack_of_server(self):
        """Server index -> hosting switch index"""
        racks = []
        for switch, count in enumerate(self.servers_at):
            racks.extend([switch] * count)
        return tuple(racks)

    @cached_property
    def rack_switches(self):
        """Switches hosting at least one server, in index order"""
        return tuple(u for u, count in enumerate(self.servers_at) if count > 0)

    @cached_property
    def neighbors(self):
        """Sorted neighbor tuple per switch"""
        adjacency = [[] for _ in range(self.switch_count)]
        for a, b in self.links:
            adjacency[a].append(b)
            adjacency[b].append(a)
        return tuple(tuple(sorted(adj)) for adj in adjacency)

    @cached_property
    def link_set(self):
        return frozenset((min(a, b), max(a, b)) for a, b in self.links)

    @cached_property
    def graph(self):
        """networkx view of the switch graph (treat as read-only)"""
        g = nx.Graph()
        g.add_nodes_from(range(self.switch_count))
        g.add_edges_from(self.links)
        return g

    def servers_of(self, switch):
        start = self.server_offset[switch]
        return range(start, start + self.servers_at[switch])

    def has_link(self, a, b):
        return (min(a, b), max(a, b)) in self.link_set

    def is_connected(self):
        """Connectivity of the switch graph restricted to switches with network links"""
        active = [u for u in range(self.switch_count) if self.degree[u] > 0]
        if not active:
            return self.switch_count <= 1
        return nx.is_connected(self.graph.subgraph(active))

    def total_ports(self):
        return sum(self.ports_per_switch)


def _make_topology(kind, ports, servers, links, radix, roles, name):
    links = tuple(sorted((min(a, b), max(a, b)) for a, b in links))
    return Topology(kind=kind, ports_per_switch=tuple(ports), servers_at=tuple(servers),
                    links=links, radix=radix, roles=tuple(roles), name=name)


def build_fat_tree(k, oversub=1):
    """
    Canonical 3-tier k-ary fat tree: k^2/4 core, k^2/2 aggregation and k^2/2 ToR switches.

    Over-subscription enlarges each ToR: it keeps k/2 uplinks and gains oversub * k/2
    server ports.
    """
    spec = TopologySpec.fat_tree(k, oversub).validate()
    half = k // 2
    core_count = half * half
    agg_base = core_count
    tor_base = core_count + k * half
    n = tor_base + k * half

    ports = [k] * tor_base + [half + oversub * half] * (k * half)
    servers = [0] * tor_base + [oversub * half] * (k * half)
    roles = ['core'] * core_count + ['agg'] * (k * half) + ['tor'] * (k * half)

    links = []
    for pod in range(k):
        for i in range(half):
            agg = agg_base + pod * half + i
            # agg i of every pod reaches core group i
            for m in range(half):
                links.append((i * half + m, agg))
            for j in range(half):
                links.append((agg, tor_base + pod * half + j))

    topology = _make_topology(FAT_TREE, ports, servers, links, k, roles, str(spec))
    logger.debug("Built %s: %d switches, %d servers", spec, n, topology.server_count)
    return topology


def build_leaf_spine(x, y):
    """y spines and x+y leaves, full bipartite wiring, x servers per leaf"""
    spec = TopologySpec.leaf_spine(x, y).validate()
    leaves = x + y
    n = y + leaves
    ports = [x + y] * n
    servers = [0] * y + [x] * leaves
    roles = ['spine'] * y + ['leaf'] * leaves
    links = [(spine, y + leaf) for spine in range(y) for leaf in range(leaves)]

    topology = _make_topology(LEAF_SPINE, ports, servers, links, x + y, roles, str(spec))
    logger.debug("Built %s: %d switches, %d servers", spec, n, topology.server_count)
    return topology


def _even_split(total, order):
    """Split total over len(order) bins; the first total % n bins of order get one extra"""
    n = len(order)
    quotient, remainder = divmod(total, n)
    counts = [quotient] * n
    for switch in order[:remainder]:
        counts[switch] += 1
    return counts


def rewire_to_rrg(base, seed):
    """
    Rebuild base's equipment as a random graph.

    Servers are spread evenly over all switches. Ports that over-subscription added beyond
    the switch radix carry servers only, so they move with the servers; each switch keeps
    radix - (its share of the remaining servers) network ports. The random simple connected
    graph on that degree sequence is a pure function of seed.
    """
    if base.kind not in (FAT_TREE, LEAF_SPINE):
        raise TopologyError(f"can only rewire a fat tree or leaf-spine, got {base.kind}")

    n = base.switch_count
    radix = base.radix
    total_servers = base.server_count
    extra_ports = sum(p - radix for p in base.ports_per_switch)
    if extra_ports < 0 or any(p < radix for p in base.ports_per_switch):
        raise TopologyError("base topology has switches below the declared radix")
    base_servers = total_servers - extra_ports

    rng = python_rng(seed)
    order = list(range(n))
    rng.shuffle(order)

    servers = _even_split(total_servers, order)
    base_share = _even_split(base_servers, order)
    degrees = [radix - share for share in base_share]
    if any(d < 0 for d in degrees):
        raise TopologyError("more servers per switch than ports after redistribution")
    ports = [s + d for s, d in zip(servers, degrees)]

    links = random_connected_graph(degrees, rng)
    name = f"rrg:{base.name},seed={seed}" if base.name else f"rrg:seed={seed}"
    topology = _make_topology(RRG, ports, servers, links, radix, ['switch'] * n, name)

    assert topology.server_count == base.server_count
    assert topology.total_ports() == base.total_ports()
    logger.debug("Rewired %s into %d links (seed %d)", base.name, len(topology.links), seed)
    return topology


def random_connected_graph(degrees, rng):
    """
    Uniform stub pairing repaired into a simple connected graph by edge swaps.

    A pairing whose repair stalls is redrawn; after _PAIRING_RESTARTS stalls a
    Havel-Hakimi realization shuffled by double edge swaps is used instead. Any
    realizable sequence therefore yields a graph.

    rng is a random.Random; the result depends only on its state and degrees.
    """
    total = sum(degrees)
    if total % 2:
        raise TopologyError(f"degree sequence has odd sum {total}")
    if not nx.is_graphical(list(degrees)):
        raise TopologyError("degree sequence is not realizable as a simple graph")
    active = [u for u, d in enumerate(degrees) if d > 0]
    if len(active) > 1 and total // 2 < len(active) - 1:
        raise TopologyError("too few links to connect every switch with network ports")

    stubs = [u for u, d in enumerate(degrees) for _ in range(d)]
    if not stubs:
        return []

    for attempt in range(_PAIRING_RESTARTS):
        rng.shuffle(stubs)
        edges = _repair_simple([(stubs[i], stubs[i + 1]) for i in range(0, len(stubs), 2)], rng)
        if edges is not None:
            break
        logger.debug("Stub pairing %d could not be made simple; drawing again", attempt + 1)
    else:
        edges = _swapped_realization(degrees, rng)

    return _repair_connected(edges, rng)


def _key(a, b):
    return (a, b) if a < b else (b, a)


def _swapped_realization(degrees, rng):
    g = nx.havel_hakimi_graph(list(degrees))
    swaps = g.number_of_edges()
    if g.number_of_nodes() >= 4 and swaps >= 2:
        try:
            nx.double_edge_swap(g, nswap=swaps, max_tries=100 * swaps, seed=rng.randrange(1 << 32))
        except nx.NetworkXException:
            pass  # the swaps already made keep the degrees
    return [_key(a, b) for a, b in g.edges()]


def _repair_simple(edges, rng):
    """Swap away self-loops and parallel edges; None when the swap budget runs out"""
    counts = {}
    for a, b in edges:
        counts[_key(a, b)] = counts.get(_key(a, b), 0) + 1

    def is_bad(index):
        a, b = edges[index]
        return a == b or counts[_key(a, b)] > 1

    budget = _SWAP_ATTEMPTS_PER_EDGE * len(edges) + 1000
    bad = [i for i in range(len(edges)) if is_bad(i)]
    while bad:
        i = bad.pop()
        if not is_bad(i):
            continue
        a, b = edges[i]
        while True:
            budget -= 1
            if budget < 0:
                return None
            j = rng.randrange(len(edges))
            if j == i:
                continue
            c, d = edges[j]
            if rng.random() < 0.5:
                c, d = d, c
            if a == c or b == d:
                continue
            first, second = _key(a, c), _key(b, d)
            if first == second or counts.get(first, 0) or counts.get(second, 0):
                continue
            for old in (edges[i], edges[j]):
                counts[_key(*old)] -= 1
                if not counts[_key(*old)]:
                    del counts[_key(*old)]
            edges[i], edges[j] = (a, c), (b, d)
            counts[first] = 1
            counts[second] = 1
            # the partner edge may have been a duplicate whose twin is now unique
            bad.extend(x for x in range(len(edges)) if x not in bad and is_bad(x))
            break
    return edges


def _repair_connected(edges, rng):
    """
    Merge components one swap at a time. The swapped edge of the first component lies
    on a cycle, so that component stays whole and the count drops by one. While two or
    more components remain and there are at least n - 1 edges, some cycle exists.
    """
    edges = list(edges)
    while True:
        g = nx.Graph()
        g.add_edges_from(edges)
        if nx.number_connected_components(g) <= 1:
            return edges

        component_of = {}
        for label, component in enumerate(nx.connected_components(g)):
            for u in component:
                component_of[u] = label
        bridges = {_key(a, b) for a, b in nx.bridges(g)}
        cyclic = [idx for idx, edge in enumerate(edges) if _key(*edge) not in bridges]
        if not cyclic:
            raise TopologyError("too few links to connect every switch with network ports")
        i = rng.choice(cyclic)
        a, b = edges[i]
        j = rng.choice([idx for idx, (c, _) in enumerate(edges) if component_of[c] != component_of[a]])
        c, d = edges[j]
        # both new edges cross between the two components, so neither can already exist
        edges[i], edges[j] = (a, c), (b, d)
        logger.debug("Merged the components of switches %d and %d", a, c)


def build(spec):
    """Build the topology described by a TopologySpec"""
    spec.validate()
    if spec.kind == FAT_TREE:
        return build_fat_tree(spec.k, spec.oversub)
    if spec.kind == LEAF_SPINE:
        return build_leaf_spine(spec.x, spec.y)
    return rewire_to_rrg(build(spec.base), spec.seed)


def nsr_stats(t):
    """(min, mean) of network ports / server ports over server-hosting switches"""
    ratios = [Fraction(t.degree[u], t.servers_at[u]) for u in t.rack_switches]
    if not ratios:
        raise TopologyError("no switch hosts servers; NSR is undefined")
    return min(ratios), sum(ratios, Fraction(0)) / len(ratios)


def nsr(t):
    """Network-server ratio: the minimum over racks"""
    return nsr_stats(t)[0]


def ideal_rrg_nsr(t):
    """NSR of the equipment-equivalent random graph with fractional (non-rounded) ports"""
    if t.server_count == 0:
        raise TopologyError("no servers; NSR is undefined")
    n = t.switch_count
    extra_ports = sum(p - t.radix for p in t.ports_per_switch)
    base_servers = t.server_count - extra_ports
    return Fraction(n * t.radix - base_servers, t.server_count)


def udf(spec):
    """Uplink-to-downlink factor NSR(R(T)) / NSR(T) with ideal port arithmetic"""
    spec.validate()
    if spec.kind == RRG:
        return Fraction(1)
    t = build(spec)
    return ideal_rrg_nsr(t) / nsr(t)


def udf_empirical(spec, seed=0):
    """UDF measured on an actual rewired graph (rounded server split)"""
    spec.validate()
    if spec.kind == RRG:
        return Fraction(1)
    t = build(spec)
    return nsr(rewire_to_rrg(t, seed)) / nsr(t)


def topology_summary(t):
    """Headline numbers of a topology for run manifests"""
    nsr_min, nsr_mean = nsr_stats(t) if t.rack_switches else (Fraction(0), Fraction(0))
    degrees = [d for d in t.degree if d > 0]
    summary = {
        'name': t.name,
        'kind': t.kind,
        'switches': t.switch_count,
        'servers': t.server_count,
        'links': len(t.links),
        'racks': len(t.rack_switches),
        'min_degree': min(degrees) if degrees else 0,
        'max_degree': max(degrees) if degrees else 0,
        'nsr_min': float(nsr_min),
        'nsr_mean': float(nsr_mean),
    }
    if t.is_connected() and len(t.rack_switches) > 1:
        racks = t.graph.subgraph([u for u in range(t.switch_count) if t.degree[u] > 0])
        summary['diameter'] = nx.diameter(racks)
        summary['avg_switch_distance'] = round(nx.average_shortest_path_length(racks), 6)
    return summary
