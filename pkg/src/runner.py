"""
Experiment orchestrator: builds the base topology and its random-graph rewiring,
fans tiles out to a worker pool and writes one CSV per result table.
"""
import csv
import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from src.core import expansion, resilience, routing, simulate, traffic
from src.core.formats import dump_expansion, dump_fct, dump_loss_report, write_text
from src.core.memory_monitor import MemoryMonitor
from src.core.routing import RoutingTable, Scheme
from src.core.topology import FAT_TREE, LEAF_SPINE, TopologySpec, build, topology_summary
from src.errors import ConfigError, ExpanderBenchError, TrafficError
from src.settings_manager import parse_count
from src.utils.log import get_logger
from src.utils.seeding import derive_seed

logger = get_logger(__name__)

NA = 'NA'
SCALE_RATIO = 3  # x / y of the leaf-spines in the scale sweep
EXECUTION_SETTINGS = frozenset({'workers', 'outputDir', 'logLevel'})


class ExperimentRunner:
    """
    Runs one configured experiment. Tiles run concurrently but rows are written in
    sorted key order, so output never depends on scheduling.
    """

    def __init__(self, config):
        self.config = config
        self.output_dir = Path(config.output_dir)
        self.memory_monitor = MemoryMonitor()
        self.results_lock = threading.Lock()
        self.written = []
        self.summaries = {}
        self._routing = {}
        self.stats = {
            'tiles': 0,
            'tiles_na': 0,
            'start_time': None,
        }

    def run(self):
        """Run the configured experiment; returns (success, message)"""
        handlers = {
            'cs_heatmap': self.run_cs_heatmap,
            'scale': self.run_scale_sweep,
            'burst': self.run_burst,
            'trace': self.run_trace_sweep,
            'failure': self.run_failure,
            'expressibility': self.run_expressibility,
            'partition': self.run_partition,
            'fairness': self.run_fairness,
        }
        handler = handlers.get(self.config.experiment)
        if handler is None:
            return False, f"Unknown experiment '{self.config.experiment}'"

        try:
            self.output_dir.mkdir(parents=True, exist_ok=True)
            self.memory_monitor.start_monitoring()
            self.stats['start_time'] = time.time()
            logger.info("Starting %s (seed %d, %d workers)", self.config.experiment, self.config.seed,
                        self.config.workers)
            handler()
            self._write_manifest()
            return True, f"{self.config.experiment} finished: wrote {', '.join(self.written)}"
        except ExpanderBenchError as e:
            logger.error("%s failed: %s", self.config.experiment, e)
            return False, f"Error running {self.config.experiment}: {e}"
        except OSError as e:
            logger.error("%s failed: %s", self.config.experiment, e)
            return False, f"Error writing results: {e}"

    # Shared plumbing

    def _topologies(self, base_spec=None):
        """(base, rrg) with the random graph seeded from the run seed"""
        base_spec = base_spec or self.config.base_spec
        if base_spec.kind not in (FAT_TREE, LEAF_SPINE):
            raise ConfigError(f"base topology must be a fat tree or leaf-spine, got {base_spec}")
        rrg_spec = TopologySpec.rrg(base_spec, derive_seed(self.config.seed, 'rrg', str(base_spec)))
        base_t = build(base_spec)
        rrg_t = build(rrg_spec)
        with self.results_lock:
            self.summaries[str(base_spec)] = topology_summary(base_t)
            self.summaries[str(rrg_spec)] = topology_summary(rrg_t)
        logger.info("Built %s (%d servers) and its rewiring %s", base_spec, base_t.server_count, rrg_spec)
        return base_t, rrg_t

    def _routing_table(self, t, scheme):
        key = (t.name, str(scheme))
        with self.results_lock:
            table = self._routing.get(key)
            if table is None:
                table = self._routing[key] = RoutingTable(t, scheme)
        return table

    def _map_tiles(self, work, keys):
        """Run work(key) for every key on the pool; results keyed, in key order"""
        results = {}
        with ThreadPoolExecutor(max_workers=self.config.workers) as executor:
            futures = {executor.submit(work, key): key for key in keys}
            for done, (future, key) in enumerate(futures.items(), start=1):
                results[key] = future.result()
                self.memory_monitor.update()
                with self.results_lock:
                    self.stats['tiles'] += 1
                estimate = self.memory_monitor.estimate_tile_memory(done, len(futures))
                logger.debug("Tile %d/%d done, projected memory %.1f MB", done, len(futures),
                             estimate['estimated_total_mb'])
        return [results[key] for key in sorted(results)]

    def _result_settings(self):
        """Settings that can change results; execution settings are left out"""
        return {key: value for key, value in sorted(self.config.settings.items()) if key not in EXECUTION_SETTINGS}

    def _header(self):
        lines = [f"experiment={self.config.experiment}", f"seed={self.config.seed}"]
        lines.extend(f"{key}={value}" for key, value in self._result_settings().items())
        return lines

    def _write_csv(self, name, fields, rows):
        path = self.output_dir / name
        with open(path, 'w', newline='') as handle:
            for line in self._header():
                handle.write(f"# {line}\n")
            writer = csv.DictWriter(handle, fieldnames=fields, lineterminator='\n')
            writer.writeheader()
            for row in rows:
                writer.writerow({key: _cell(value) for key, value in row.items()})
        self.written.append(name)
        logger.info("Wrote %d rows to %s", len(rows), path)
        return path

    def _write_dump(self, name, text):
        write_text(self.output_dir / name, text)
        self.written.append(name)

    def _write_manifest(self):
        """Deterministic run record; wall time and memory go to the log only"""
        manifest = {
            'experiment': self.config.experiment,
            'seed': self.config.seed,
            'settings': self._result_settings(),
            'topologies': self.summaries,
            'files': self.written,
            'tiles': self.stats['tiles'],
            'tiles_na': self.stats['tiles_na'],
        }
        with open(self.output_dir / 'run_manifest.json', 'w') as handle:
            json.dump(manifest, handle, indent=2, sort_keys=True, default=str)
        elapsed = time.time() - self.stats['start_time']
        memory = self.memory_monitor.get_stats()
        logger.info("Run finished in %.1fs, peak memory %.1f MB", elapsed, memory['process']['peak_mb'])

    def _mean_rates(self, t, scheme, spec, seed, subflows=1):
        """Max-min allocation of a C-S pattern on t; flows split over subflows when asked"""
        pattern = traffic.cs_pattern(t, traffic.CsSpec(spec[0], spec[1], seed))
        table = self._routing_table(t, scheme)
        if subflows > 1:
            routes = simulate.assign_subflows(t, pattern, scheme, subflows, seed, table)
            return simulate.multipath_maxmin_allocate(t, routes)
        routes = simulate.assign_paths(t, pattern, scheme, seed, table)
        return simulate.maxmin_allocate(t, routes)

    def _cs_tile(self, base_t, rrg_t, c, s, seed):
        """Throughput of the random graph (configured scheme) over the base (ECMP)"""
        base_alloc = self._mean_rates(base_t, Scheme.ecmp(), (c, s), seed)
        rrg_alloc = self._mean_rates(rrg_t, self.config.scheme, (c, s), seed)
        return base_alloc, rrg_alloc

    def _na(self, key, error):
        logger.warning("Tile %s is not realizable: %s", key, error)
        with self.results_lock:
            self.stats['tiles_na'] += 1

    # Experiments

    def run_cs_heatmap(self):
        base_t, rrg_t = self._topologies()
        rack, graph_rack = traffic.rack_size(base_t), traffic.rack_size(rrg_t)
        tiles = sorted({(parse_count(c, rack, graph_rack), parse_count(s, rack, graph_rack))
                        for c in self.config.c_values for s in self.config.s_values})

        def work(key):
            c, s = key
            row = {'C': c, 'S': s}
            try:
                base_alloc, rrg_alloc = self._cs_tile(base_t, rrg_t, c, s, derive_seed(self.config.seed, c, s))
            except TrafficError as e:
                self._na(key, e)
                return {**row, 'ratio': NA, 'mean_rrg': NA, 'mean_base': NA, 'median_rrg': NA, 'median_base': NA}
            logger.debug("Tile C=%d S=%d done", c, s)
            return {**row, 'ratio': rrg_alloc.mean() / base_alloc.mean(),
                    'mean_rrg': rrg_alloc.mean(), 'mean_base': base_alloc.mean(),
                    'median_rrg': rrg_alloc.median(), 'median_base': base_alloc.median()}

        rows = self._map_tiles(work, tiles)
        return self._write_csv('cs_heatmap.csv',
                               ['C', 'S', 'ratio', 'mean_rrg', 'mean_base', 'median_rrg', 'median_base'], rows)

    def run_scale_sweep(self):
        keys = []
        built = {}
        for y in sorted(set(self.config.scale_sizes)):
            spec = TopologySpec.leaf_spine(SCALE_RATIO * y, y)
            built[y] = self._topologies(spec)
            rack, graph_rack = SCALE_RATIO * y, traffic.rack_size(built[y][1])
            for c, s in self.config.cs_points:
                keys.append((built[y][0].server_count, parse_count(c, rack, graph_rack),
                             parse_count(s, rack, graph_rack), y))

        def work(key):
            servers, c, s, y = key
            base_t, rrg_t = built[y]
            row = {'servers': servers, 'C': c, 'S': s}
            try:
                base_alloc, rrg_alloc = self._cs_tile(base_t, rrg_t, c, s,
                                                      derive_seed(self.config.seed, c, s, servers))
            except TrafficError as e:
                self._na(key, e)
                return {**row, 'ratio': NA}
            return {**row, 'ratio': rrg_alloc.mean() / base_alloc.mean()}

        rows = self._map_tiles(work, sorted(set(keys)))
        return self._write_csv('scale.csv', ['servers', 'C', 'S', 'ratio'], rows)

    def _fct(self, t, scheme, pattern, seed):
        table = self._routing_table(t, scheme)
        routes = simulate.assign_paths(t, pattern, scheme, seed, table)
        return simulate.fct_simulate(t, routes, pattern)

    def run_burst(self):
        base_t, rrg_t = self._topologies()
        preset = self.config.burst_preset
        seed = derive_seed(self.config.seed, 'burst', preset)

        def work(label):
            t, scheme = (base_t, Scheme.ecmp()) if label == 'base' else (rrg_t, self.config.scheme)
            pattern = traffic.burst_preset(t, preset, seed, self.config.flow_size_bytes)
            return label, self._fct(t, scheme, pattern, seed)

        results = self._map_tiles(work, ['base', 'rrg'])
        rows = []
        summary = []
        for label, result in results:
            rows.extend({'topology': label, 'flow_id': f, 'fct': seconds} for f, seconds in result.items())
            p50, p90, p99 = result.summary()
            summary.append({'topology': label, 'flows': len(result.flow_ids), 'p50': p50, 'p90': p90, 'p99': p99})
            self._write_dump(f"burst_{label}.fct", dump_fct(result))
        self._write_csv('burst_fct.csv', ['topology', 'flow_id', 'fct'], rows)
        return self._write_csv('burst_summary.csv', ['topology', 'flows', 'p50', 'p90', 'p99'], summary)

    def run_trace_sweep(self):
        base_t, rrg_t = self._topologies()
        top_n = self.config.top_n or None
        matrix = traffic.load_rack_matrix(self.config.matrix_path, top_n=top_n, norm=1.0)
        seed = derive_seed(self.config.seed, 'trace')
        assignment = traffic.assign_matrix_racks(matrix, base_t, seed)

        def work(key):
            norm, label = key
            scaled = traffic.scale_matrix(matrix, norm)
            pattern = traffic.expand_to_servers(scaled, base_t, assignment, seed, self.config.start_window)
            t, scheme = base_t, Scheme.ecmp()
            if label == 'rrg':
                pattern = traffic.remap_busiest_packed(pattern, base_t, rrg_t, seed)
                t, scheme = rrg_t, self.config.scheme
            row = {'norm_factor': norm, 'topology': label, 'flows': len(pattern)}
            if not len(pattern):
                return {**row, 'p50': NA, 'p90': NA, 'p99': NA}
            p50, p90, p99 = self._fct(t, scheme, pattern, seed).summary()
            return {**row, 'p50': p50, 'p90': p90, 'p99': p99}

        keys = [(norm, label) for norm in sorted(set(self.config.norm_values)) for label in ('base', 'rrg')]
        rows = self._map_tiles(work, keys)
        return self._write_csv('trace.csv', ['norm_factor', 'topology', 'flows', 'p50', 'p90', 'p99'], rows)

    def _failure_schemes(self):
        k = self.config.scheme.k if self.config.scheme.source_routed else 4
        return [Scheme.ecmp(), Scheme.k_shortest(k), Scheme.k_disjoint(k)]

    def run_failure(self):
        base_t, rrg_t = self._topologies()
        keys = [('base', str(Scheme.ecmp()))] + [('rrg', str(s)) for s in self._failure_schemes()]
        schemes = {str(s): s for s in self._failure_schemes()}

        def work(key):
            label, scheme_name = key
            t = base_t if label == 'base' else rrg_t
            scheme = schemes[scheme_name]
            report = resilience.expected_transient_loss(
                t, scheme, self.config.failure_kind, self.config.failure_lambda,
                mode=self.config.loss_mode, samples=self.config.loss_samples,
                seed=derive_seed(self.config.seed, 'failure', label),
                max_elements=self.config.failure_elements or None,
                routing=self._routing_table(t, scheme))
            return label, report

        rows = []
        summary = []
        for label, report in self._map_tiles(work, sorted(keys)):
            common = {'topology': label, 'scheme': report.scheme, 'kind': report.kind}
            rows.extend({**common, 'element': element, 'p_loss': p} for element, p in report.rows)
            summary.append({**common, 'avg_p_loss': report.p_loss_given_failure,
                            'expected_loss': report.expected_loss})
            self._write_dump(f"loss_{label}_{report.scheme.replace(':', '')}.txt", dump_loss_report(report))
        self._write_csv('failure.csv', ['topology', 'scheme', 'kind', 'element', 'p_loss'], rows)
        return self._write_csv('failure_summary.csv',
                               ['topology', 'scheme', 'kind', 'avg_p_loss', 'expected_loss'], summary)

    def run_expressibility(self):
        _, rrg_t = self._topologies()
        keys = [(name, k) for name in self.config.express_schemes for k in self.config.express_k]

        def work(key):
            name, k = key
            scheme = Scheme.parse(name, k)
            report = routing.expressibility_sweep(rrg_t, scheme, routing=self._routing_table(rrg_t, scheme))
            return {'scheme': scheme.name, 'K': k, 'paths': report.paths,
                    'non_expressible': report.non_expressible, 'fraction': report.fraction}

        rows = self._map_tiles(work, sorted(set(keys)))
        return self._write_csv('expressibility.csv', ['scheme', 'K', 'paths', 'non_expressible', 'fraction'], rows)

    def run_partition(self):
        specs = self.config.partition_topologies
        if not specs:
            base_spec = self.config.base_spec
            specs = (TopologySpec.rrg(base_spec, derive_seed(self.config.seed, 'rrg', str(base_spec))),)
        topologies = {}
        for spec in specs:
            t = build(spec)
            topologies[str(spec)] = t
            self.summaries[str(spec)] = topology_summary(t)

        def expansion_of(name):
            t = topologies[name]
            return name, expansion.estimate_edge_expansion(
                t, self.config.expansion_budget, derive_seed(self.config.seed, 'expansion', name),
                restarts=self.config.partition_restarts)

        reports = dict(self._map_tiles(expansion_of, sorted(topologies)))
        self._write_dump('expansion.txt', ''.join(dump_expansion(reports[name]) for name in sorted(reports)))

        def work(key):
            switches, name, k = key
            t = topologies[name]
            seed = derive_seed(self.config.seed, 'partition', name, k)
            random_fraction = expansion.cross_cluster_fraction(t, expansion.random_balanced_partition(t, k, seed))
            kl = expansion.partition_graph(t, k, seed, self.config.partition_restarts)
            kl_fraction = expansion.cross_cluster_fraction(t, kl)
            bound = NA
            if k % 2 == 0:
                bound = expansion.expansion_bound(2 * len(t.links) / t.switch_count, k, kl_fraction)
            return {'switches': switches, 'k': k, 'random_fraction': random_fraction, 'kl_fraction': kl_fraction,
                    'baseline': (k - 1) / k, 'expansion_bound': bound, 'h_upper': reports[name].h_upper}

        keys = [(t.switch_count, name, k) for name, t in topologies.items() for k in self.config.k_values
                if k <= t.switch_count]
        rows = self._map_tiles(work, sorted(keys))
        return self._write_csv('partition.csv', ['switches', 'k', 'random_fraction', 'kl_fraction', 'baseline',
                                                 'expansion_bound', 'h_upper'], rows)

    def run_fairness(self):
        base_t, rrg_t = self._topologies()
        count = self.config.fairness_racks * traffic.rack_size(base_t)
        seed = derive_seed(self.config.seed, 'fairness', count)

        def work(label):
            t, scheme = (base_t, Scheme.ecmp()) if label == 'base' else (rrg_t, self.config.scheme)
            return label, self._mean_rates(t, scheme, (count, count), seed, self.config.fairness_subflows)

        rows = []
        summary = []
        for label, allocation in self._map_tiles(work, ['base', 'rrg']):
            rows.extend({'topology': label, 'flow_id': f, 'rate': rate} for f, rate in allocation.items())
            summary.append({'topology': label, 'jain': simulate.jain_index(allocation),
                            'mean': allocation.mean(), 'median': allocation.median()})
        self._write_csv('fairness_rates.csv', ['topology', 'flow_id', 'rate'], rows)
        return self._write_csv('fairness_summary.csv', ['topology', 'jain', 'mean', 'median'], summary)


def _cell(value):
    if isinstance(value, float):
        return repr(value)
    return value
