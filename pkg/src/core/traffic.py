"""
Traffic generation: the C-S model and its burst presets, rack-level traffic
matrices, server-level expansion and placement remapping across topologies.
"""
import csv
import math
from dataclasses import dataclass, field

import numpy as np

from src.errors import TrafficError
from src.utils.log import get_logger
from src.utils.seeding import derive_seed, numpy_rng, python_rng

logger = get_logger(__name__)

UNBOUNDED = math.inf
KB = 1000
BURST_FLOW_BYTES = 100 * KB
TRACE_START_WINDOW = 0.010  # seconds

BURST_PRESETS = {
    'incast_40_20': (40, 20),
    'outcast_20_40': (20, 40),
}


@dataclass(frozen=True)
class Flow:
    """One transfer between servers; size is UNBOUNDED for long-running flows"""

    src: int
    dst: int
    size: float = UNBOUNDED
    start: float = 0.0

    def __post_init__(self):
        if self.src == self.dst:
            raise TrafficError(f"flow from server {self.src} to itself")
        if not self.size > 0:
            raise TrafficError(f"flow size must be positive, got {self.size}")
        if self.start < 0:
            raise TrafficError(f"flow start must be >= 0, got {self.start}")

    @property
    def bounded(self):
        return math.isfinite(self.size)


@dataclass(frozen=True)
class TrafficPattern:
    """Immutable list of flows; a flow's id is its index"""

    flows: tuple
    clients: tuple = ()
    servers: tuple = ()

    def __len__(self):
        return len(self.flows)

    def __iter__(self):
        return iter(self.flows)

    @property
    def total_bytes(self):
        return sum(f.size for f in self.flows if f.bounded)

    def endpoints(self):
        return sorted({f.src for f in self.flows} | {f.dst for f in self.flows})


@dataclass(frozen=True)
class CsSpec:
    """|C| clients, |S| servers, seed, flow size and start window (0 = simultaneous)"""

    c: int
    s: int
    seed: int = 0
    flow_size: float = UNBOUNDED
    start_window: float = 0.0

    def __post_init__(self):
        if self.c < 1 or self.s < 1:
            raise TrafficError(f"C-S model needs |C| >= 1 and |S| >= 1, got {self.c}, {self.s}")
        if self.start_window < 0:
            raise TrafficError("start window must be >= 0")


@dataclass(frozen=True, eq=False)
class RackMatrix:
    """Bytes per ordered rack pair (diagonal ignored) after scaling by norm_factor"""

    racks: tuple
    volume: np.ndarray = field(repr=False)
    norm_factor: float = 1.0

    def __post_init__(self):
        if self.volume.shape != (len(self.racks), len(self.racks)):
            raise TrafficError("rack matrix volume shape does not match its rack list")
        if (self.volume < 0).any():
            raise TrafficError("rack matrix has negative volumes")

    def out_volumes(self):
        return self.volume.sum(axis=1) - np.diag(self.volume)


def _pack_racks(t, racks, count):
    """Fill count servers into the fewest racks of the given ordered candidates"""
    chosen = []
    members = []
    for rack in racks:
        if len(members) >= count:
            break
        chosen.append(rack)
        for server in t.servers_of(rack):
            if len(members) == count:
                break
            members.append(server)
    return chosen, members


def cs_placement(t, spec):
    """
    Choose C and S servers: racks in seeded random order, largest racks first,
    C racks disjoint from S racks.
    """
    if spec.c + spec.s > t.server_count:
        raise TrafficError(
            f"C-S model with |C|={spec.c}, |S|={spec.s} needs more than the {t.server_count} servers available")

    rng = python_rng(spec.seed)
    racks = list(t.rack_switches)
    rng.shuffle(racks)
    # stable sort keeps the random order among racks of equal size
    racks.sort(key=lambda r: -t.servers_at[r])

    client_racks, clients = _pack_racks(t, racks, spec.c)
    remaining = [r for r in racks if r not in set(client_racks)]
    server_racks, servers = _pack_racks(t, remaining, spec.s)
    if len(clients) < spec.c or len(servers) < spec.s:
        raise TrafficError(
            f"not enough disjoint racks for |C|={spec.c}, |S|={spec.s} on {t.name or t.kind}")
    return tuple(client_racks), tuple(clients), tuple(server_racks), tuple(servers)


def cs_pattern(t, spec):
    """One flow per (client, server) pair, |C| * |S| flows in client-major order"""
    _, clients, _, servers = cs_placement(t, spec)

    count = len(clients) * len(servers)
    if spec.start_window > 0:
        starts = numpy_rng(derive_seed(spec.seed, 'starts')).uniform(0.0, spec.start_window, count)
    else:
        starts = np.zeros(count)

    flows = []
    for index, (client, server) in enumerate((c, s) for c in clients for s in servers):
        flows.append(Flow(client, server, spec.flow_size, float(starts[index])))
    logger.debug("C-S pattern |C|=%d |S|=%d: %d flows", spec.c, spec.s, len(flows))
    return TrafficPattern(tuple(flows), clients, servers)


def burst_preset(t, name, seed=0, flow_size=BURST_FLOW_BYTES):
    """incast_40_20 or outcast_20_40: equal-size flows (100 KB by default) all starting at t = 0"""
    if name not in BURST_PRESETS:
        raise TrafficError(f"unknown burst preset '{name}'; choose from {sorted(BURST_PRESETS)}")
    c, s = BURST_PRESETS[name]
    return cs_pattern(t, CsSpec(c, s, seed, flow_size=flow_size, start_window=0.0))


def rack_size(t):
    """Servers in the largest rack (r in the C-S presets)"""
    return max(t.servers_at)


def rack_to_rack(t, seed=0, flow_size=UNBOUNDED):
    r = rack_size(t)
    return cs_pattern(t, CsSpec(r, r, seed, flow_size))


def uniform_pattern(t, seed=0, flow_size=UNBOUNDED):
    half = t.server_count // 2
    return cs_pattern(t, CsSpec(half, half, seed, flow_size))


def single_outcast(t, fanout, seed=0, flow_size=BURST_FLOW_BYTES):
    """|C| = 1 fan-out to `fanout` servers"""
    return cs_pattern(t, CsSpec(1, fanout, seed, flow_size))


def _read_matrix_rows(path):
    rows = []
    try:
        with open(path, newline='') as handle:
            for line_no, row in enumerate(csv.reader(handle), start=1):
                if not row or not ''.join(row).strip() or row[0].lstrip().startswith('#'):
                    continue
                if len(row) != 3:
                    raise TrafficError(f"{path}:{line_no}: expected src_rack,dst_rack,bytes")
                src, dst, value = (cell.strip() for cell in row)
                try:
                    volume = float(value)
                except ValueError:
                    raise TrafficError(f"{path}:{line_no}: bad byte count '{value}'")
                if volume < 0 or not math.isfinite(volume):
                    raise TrafficError(f"{path}:{line_no}: negative or non-finite volume {value}")
                rows.append((src, dst, volume))
    except OSError as e:
        raise TrafficError(f"cannot read rack matrix {path}: {e}")
    return rows


def load_rack_matrix(path, top_n=None, norm=1.0):
    """Parse src_rack,dst_rack,bytes rows, keep the top_n racks by outgoing volume, scale by norm"""
    rows = _read_matrix_rows(path)

    index = {}
    for src, dst, _ in rows:
        for rack in (src, dst):
            if rack not in index:
                index[rack] = len(index)
    racks = list(index)
    volume = np.zeros((len(racks), len(racks)))
    for src, dst, value in rows:
        if src != dst:
            volume[index[src], index[dst]] += value

    top_n = len(racks) if top_n is None else top_n
    if top_n < 1 or top_n > len(racks):
        raise TrafficError(f"top_n={top_n} but the matrix has {len(racks)} racks")

    out = volume.sum(axis=1)
    ranked = sorted(range(len(racks)), key=lambda i: (-out[i], i))
    kept = sorted(ranked[:top_n])
    matrix = RackMatrix(tuple(racks[i] for i in kept), volume[np.ix_(kept, kept)] * norm, norm)
    logger.info("Loaded rack matrix %s: kept %d of %d racks, norm %g", path, top_n, len(racks), norm)
    return matrix


def scale_matrix(m, norm):
    """Rescale a matrix loaded at norm 1.0 (or any norm) to a new norm factor"""
    base = m.volume / m.norm_factor if m.norm_factor else m.volume
    return RackMatrix(m.racks, base * norm, norm)


def assign_matrix_racks(m, t, seed=0):
    """Seeded map of matrix racks onto distinct server-hosting switches of t"""
    racks = list(t.rack_switches)
    if len(racks) < len(m.racks):
        raise TrafficError(f"topology has {len(racks)} racks, matrix needs {len(m.racks)}")
    python_rng(seed).shuffle(racks)
    return dict(zip(m.racks, racks[:len(m.racks)]))


def expand_to_servers(m, t, assignment=None, seed=0, window=TRACE_START_WINDOW):
    """
    Split each rack-pair volume evenly over all server pairs of the two racks.

    Starts are uniform in [0, window) from the seed.
    """
    assignment = assignment or assign_matrix_racks(m, t, seed)
    switches = [assignment.get(rack) for rack in m.racks]
    if None in switches:
        raise TrafficError("rack assignment does not cover every matrix rack")
    if len(set(switches)) != len(switches):
        raise TrafficError("rack assignment maps two matrix racks onto one switch")
    for rack, switch in zip(m.racks, switches):
        if t.servers_at[switch] < 1:
            raise TrafficError(f"matrix rack {rack} maps to switch {switch} which hosts no servers")

    pairs = []
    for i, j in zip(*np.nonzero(m.volume)):
        if i == j:
            continue
        a, b = switches[i], switches[j]
        size = float(m.volume[i, j]) / (t.servers_at[a] * t.servers_at[b])
        pairs.extend((src, dst, size) for src in t.servers_of(a) for dst in t.servers_of(b))

    starts = numpy_rng(derive_seed(seed, 'trace-starts')).uniform(0.0, window, len(pairs)) if window > 0 \
        else np.zeros(len(pairs))
    flows = tuple(Flow(src, dst, size, float(start)) for (src, dst, size), start in zip(pairs, starts))
    logger.debug("Expanded %d rack pairs into %d flows", int(np.count_nonzero(m.volume)), len(flows))
    return TrafficPattern(flows)


def server_volumes(p):
    """Bytes sent plus received per server"""
    volumes = {}
    for flow in p.flows:
        volumes[flow.src] = volumes.get(flow.src, 0.0) + flow.size
        volumes[flow.dst] = volumes.get(flow.dst, 0.0) + flow.size
    return volumes


def remap_busiest_packed(p, from_t, to_t, seed=0):
    """
    Move p onto to_t: busiest servers first, packed rack by rack into seeded-random racks.

    Ties in busyness go to the lower server index.
    """
    volumes = server_volumes(p)
    for server in volumes:
        if not 0 <= server < from_t.server_count:
            raise TrafficError(f"pattern references server {server} missing from the source topology")
    if len(volumes) > to_t.server_count:
        raise TrafficError(f"pattern uses {len(volumes)} servers, target topology has {to_t.server_count}")

    ranked = sorted(volumes, key=lambda s: (-volumes[s], s))
    racks = list(to_t.rack_switches)
    python_rng(seed).shuffle(racks)
    slots = [server for rack in racks for server in to_t.servers_of(rack)]
    mapping = dict(zip(ranked, slots))

    flows = tuple(Flow(mapping[f.src], mapping[f.dst], f.size, f.start) for f in p.flows)
    return TrafficPattern(flows,
                          tuple(mapping[c] for c in p.clients if c in mapping),
                          tuple(mapping[s] for s in p.servers if s in mapping))
