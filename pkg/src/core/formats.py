"""
Plain-text dumps of topologies, paths, traffic patterns, allocations, completion
times, loss reports and expansion reports.

Numbers use repr() so every dump parses back to the same floats.
"""
import math

from src.core.simulate import PERCENTILES
from src.core.topology import IMPORTED, Topology
from src.core.traffic import Flow, TrafficPattern
from src.errors import FormatError, ExpanderBenchError


def _number(value):
    if isinstance(value, float):
        return 'inf' if math.isinf(value) else repr(value)
    return str(value)


def _lines(text):
    return [line for line in text.splitlines() if line.strip() and not line.lstrip().startswith('#')]


def _int(token, line):
    try:
        return int(token)
    except ValueError:
        raise FormatError(f"expected an integer, got '{token}' in line '{line}'")


def _float(token, line):
    try:
        return float(token)
    except ValueError:
        raise FormatError(f"expected a number, got '{token}' in line '{line}'")


def write_text(path, text):
    with open(path, 'w', newline='\n') as handle:
        handle.write(text)


def read_text(path):
    try:
        with open(path) as handle:
            return handle.read()
    except OSError as e:
        raise FormatError(f"cannot read {path}: {e}")


# Topology

def dump_topology(t):
    out = [f"switches={t.switch_count}"]
    for u in range(t.switch_count):
        out.append(f"{u} ports={t.ports_per_switch[u]} servers={t.servers_at[u]}")
    out.extend(f"{a} {b}" for a, b in sorted(t.links))
    return '\n'.join(out) + '\n'


def load_topology(text, kind=IMPORTED, radix=None, name=''):
    """Inverse of dump_topology; radix defaults to the largest port count"""
    lines = _lines(text)
    if not lines or not lines[0].startswith('switches='):
        raise FormatError("topology dump must start with 'switches=<N>'")
    n = _int(lines[0].split('=', 1)[1], lines[0])

    ports = [None] * n
    servers = [None] * n
    links = []
    for line in lines[1:]:
        tokens = line.split()
        if len(tokens) == 3 and tokens[1].startswith('ports=') and tokens[2].startswith('servers='):
            u = _int(tokens[0], line)
            if not 0 <= u < n:
                raise FormatError(f"switch id {u} outside [0, {n})")
            ports[u] = _int(tokens[1][len('ports='):], line)
            servers[u] = _int(tokens[2][len('servers='):], line)
        elif len(tokens) == 2:
            links.append((_int(tokens[0], line), _int(tokens[1], line)))
        else:
            raise FormatError(f"unrecognized topology line '{line}'")

    missing = [u for u in range(n) if ports[u] is None]
    if missing:
        raise FormatError(f"no port/server line for switches {missing[:5]}")
    try:
        return Topology(kind=kind, ports_per_switch=tuple(ports), servers_at=tuple(servers),
                        links=tuple(sorted((min(a, b), max(a, b)) for a, b in links)),
                        radix=radix if radix is not None else max(ports, default=0), name=name)
    except ExpanderBenchError as e:
        raise FormatError(f"invalid topology dump: {e}")


# Paths

def dump_paths(path_sets):
    out = []
    for ps in path_sets:
        for path in ps.paths:
            out.append(f"{ps.src} {ps.dst} {ps.scheme} {len(path) - 1} {'>'.join(map(str, path))}")
    return '\n'.join(out) + ('\n' if out else '')


def load_paths(text):
    """[(src, dst, scheme text, path)]"""
    paths = []
    for line in _lines(text):
        tokens = line.split()
        if len(tokens) != 5:
            raise FormatError(f"path line needs 5 fields: '{line}'")
        hops = tuple(_int(h, line) for h in tokens[4].split('>'))
        if len(hops) - 1 != _int(tokens[3], line):
            raise FormatError(f"path length does not match hop list: '{line}'")
        src, dst = _int(tokens[0], line), _int(tokens[1], line)
        if (hops[0], hops[-1]) != (src, dst):
            raise FormatError(f"path endpoints do not match: '{line}'")
        paths.append((src, dst, tokens[2], hops))
    return paths


# Traffic patterns

def write_pattern(p):
    return ''.join(f"{f.src} {f.dst} {_number(float(f.size))} {_number(float(f.start))}\n" for f in p.flows)


def read_pattern(text):
    flows = []
    for line in _lines(text):
        tokens = line.split()
        if len(tokens) != 4:
            raise FormatError(f"pattern line needs 4 fields: '{line}'")
        try:
            flows.append(Flow(_int(tokens[0], line), _int(tokens[1], line),
                              _float(tokens[2], line), _float(tokens[3], line)))
        except FormatError:
            raise
        except ExpanderBenchError as e:
            raise FormatError(f"invalid flow '{line}': {e}")
    return TrafficPattern(tuple(flows))


# Allocations and completion times

def dump_allocation(a):
    return ''.join(f"{flow_id} {_number(rate)}\n" for flow_id, rate in a.items())


def load_allocation(text):
    rows = []
    for line in _lines(text):
        tokens = line.split()
        if len(tokens) != 2:
            raise FormatError(f"allocation line needs 2 fields: '{line}'")
        rows.append((_int(tokens[0], line), _float(tokens[1], line)))
    return rows


def dump_fct(result):
    out = [f"{flow_id} {_number(seconds)}" for flow_id, seconds in result.items()]
    out.append(','.join(f"p{q}" for q in PERCENTILES))
    out.append(','.join(_number(v) for v in result.summary()))
    return '\n'.join(out) + '\n'


def load_fct(text):
    """(rows, percentiles); percentiles maps 'p50' etc. to seconds"""
    lines = _lines(text)
    if len(lines) < 2 or not lines[-2].startswith('p'):
        raise FormatError("completion-time dump is missing its percentile footer")
    names = lines[-2].split(',')
    values = [_float(v, lines[-1]) for v in lines[-1].split(',')]
    if len(names) != len(values):
        raise FormatError("percentile footer names and values differ in length")
    rows = []
    for line in lines[:-2]:
        tokens = line.split()
        if len(tokens) != 2:
            raise FormatError(f"completion line needs 2 fields: '{line}'")
        rows.append((_int(tokens[0], line), _float(tokens[1], line)))
    return rows, dict(zip(names, values))


# Loss and expansion reports

def dump_loss_report(report):
    out = [f"{report.kind} {label} {_number(float(p))}" for label, p in report.rows]
    out.append(f"{report.kind} {_number(float(report.p_loss_given_failure))} {_number(float(report.expected_loss))}")
    return '\n'.join(out) + '\n'


def load_loss_report(text):
    """(rows, (kind, avg_p_loss, expected_loss)); the summary is the last line"""
    lines = _lines(text)
    if not lines:
        raise FormatError("empty loss report")
    rows = []
    for line in lines:
        if len(line.split()) != 3:
            raise FormatError(f"loss report line needs 3 fields: '{line}'")
    for line in lines[:-1]:
        kind, element, p = line.split()
        rows.append((kind, element, _float(p, line)))
    kind, average, expected = lines[-1].split()
    return rows, (kind, _float(average, lines[-1]), _float(expected, lines[-1]))


def dump_expansion(report):
    fields = (report.n, report.d, report.k, report.f, report.h_upper, report.expansion_bound,
              len(report.witness_set))
    return ' '.join(_number(float(v) if i in (1, 3, 4, 5) else v) for i, v in enumerate(fields)) + '\n'


def load_expansion(text):
    lines = _lines(text)
    if len(lines) != 1 or len(lines[0].split()) != 7:
        raise FormatError("expansion report is a single line of 7 fields")
    tokens = lines[0].split()
    line = lines[0]
    return {
        'n': _int(tokens[0], line),
        'd': _float(tokens[1], line),
        'k': _int(tokens[2], line),
        'f': _float(tokens[3], line),
        'h_upper': _float(tokens[4], line),
        'expansion_bound': _float(tokens[5], line),
        'witness_size': _int(tokens[6], line),
    }
