import itertools

import networkx as nx
import pytest

from conftest import make_topology
from oracles import augmenting_path_max_flow
from src.core.routing import (
    ECMP, K_DISJOINT, K_SHORTEST, RoutingTable, Scheme, compute_next_hops, expressibility_report,
    expressibility_sweep, expressibility_witness, average_path_length, is_valid_path, k_disjoint_paths,
    k_shortest_paths, path_set, shortest_paths,
)
from src.core.topology import TopologySpec, build, build_leaf_spine
from src.errors import RoutingError


class TestScheme:
    @pytest.mark.parametrize('text,expected', [
        ('ecmp', Scheme.ecmp()),
        ('kshortest:4', Scheme.k_shortest(4)),
        ('k-disjoint:2', Scheme.k_disjoint(2)),
    ])
    def test_parse(self, text, expected):
        assert Scheme.parse(text) == expected

    def test_parse_uses_explicit_k(self):
        assert Scheme.parse('kdisjoint', 3) == Scheme.k_disjoint(3)

    def test_str(self):
        assert str(Scheme.ecmp()) == 'ecmp'
        assert str(Scheme.k_shortest(8)) == 'kshortest:8'

    @pytest.mark.parametrize('name,k', [('vlb', 1), (K_SHORTEST, 0)])
    def test_rejects_bad_scheme(self, name, k):
        with pytest.raises(RoutingError):
            Scheme(name, k)


class TestNextHops:
    def test_leaf_spine_uses_every_spine(self, leaf_spine_2_2):
        table = compute_next_hops(leaf_spine_2_2)
        assert table.next_hops(2, 3) == (0, 1)
        assert table.next_hops(0, 3) == (3,)
        assert table.next_hops(3, 3) == ()

    def test_disconnected_topology_rejected(self):
        t = make_topology([(0, 1), (2, 3)])
        with pytest.raises(RoutingError):
            compute_next_hops(t)

    def test_fat_tree_path_count(self, fat_tree_4):
        tors = [u for u, role in enumerate(fat_tree_4.roles) if role == 'tor']
        table = compute_next_hops(fat_tree_4)
        # ToRs in different pods: 2 aggs up x 2 cores each
        assert table.count_shortest_paths(tors[0], tors[-1]) == 4
        assert table.count_shortest_paths(tors[0], tors[1]) == 2


class TestShortestPaths:
    def test_cycle_has_two(self, cycle4):
        ps = shortest_paths(cycle4, 0, 2)
        assert ps.paths == ((0, 1, 2), (0, 3, 2))
        assert ps.total_count == 2

    def test_same_switch(self, cycle4):
        assert shortest_paths(cycle4, 1, 1).paths == ((1,),)

    def test_truncated_enumeration_keeps_exact_count(self, fat_tree_4):
        tors = [u for u, role in enumerate(fat_tree_4.roles) if role == 'tor']
        ps = shortest_paths(fat_tree_4, tors[0], tors[-1], cap=3)
        assert len(ps.paths) == 3
        assert ps.total_count == 4
        assert list(ps.paths) == sorted(ps.paths)

    def test_missing_switch(self, cycle4):
        with pytest.raises(RoutingError):
            shortest_paths(cycle4, 0, 9)


class TestKShortest:
    def test_five_cycle_adjacent_pair(self, cycle5):
        ps = k_shortest_paths(cycle5, 0, 1, 2)
        assert ps.paths == ((0, 1), (0, 4, 3, 2, 1))

    def test_fewer_paths_than_k(self, path3):
        assert k_shortest_paths(path3, 0, 2, 5).paths == ((0, 1, 2),)

    def test_order_is_length_then_lexicographic(self, k4):
        paths = k_shortest_paths(k4, 0, 3, 4).paths
        assert paths[0] == (0, 3)
        assert paths[1:] == ((0, 1, 3), (0, 2, 3), (0, 1, 2, 3))


class TestKDisjoint:
    def test_four_cycle(self, cycle4):
        ps = k_disjoint_paths(cycle4, 0, 2, 2)
        assert set(ps.paths) == {(0, 1, 2), (0, 3, 2)}

    def test_limited_by_connectivity(self, cycle4):
        assert len(k_disjoint_paths(cycle4, 0, 2, 3)) == 2

    def test_paths_share_no_link(self):
        t = build(TopologySpec.rrg(TopologySpec.leaf_spine(6, 2), seed=4))
        for src, dst in [(0, 5), (1, 9), (3, 7)]:
            ps = k_disjoint_paths(t, src, dst, 4)
            used = [frozenset(hop) for p in ps.paths for hop in zip(p, p[1:])]
            assert len(used) == len(set(used))
            assert all(is_valid_path(t, p) for p in ps.paths)

    def test_count_matches_edge_connectivity(self):
        t = build(TopologySpec.rrg(TopologySpec.fat_tree(4, 1), seed=9))
        for src, dst in itertools.islice(itertools.permutations(range(t.switch_count), 2), 0, 400, 37):
            expected = min(10, augmenting_path_max_flow(t, src, dst))
            assert len(k_disjoint_paths(t, src, dst, 10)) == expected

    def test_minimum_total_length(self, k4):
        ps = k_disjoint_paths(k4, 0, 3, 3)
        assert sorted(len(p) - 1 for p in ps.paths) == [1, 2, 2]


class TestExpressibility:
    def test_shortest_path_reports_destination(self, cycle4):
        table = compute_next_hops(cycle4)
        assert expressibility_witness(table, (0, 1, 2)) == 2

    def test_long_way_round_five_cycle(self, cycle5):
        table = compute_next_hops(cycle5)
        assert expressibility_witness(table, (0, 4, 3, 2, 1)) == 3

    def test_non_expressible_path(self):
        # 6-cycle plus chords 0-2 and 3-5: detour 0-1-2-3-4-5 has no single waypoint split
        t = make_topology([(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (0, 2), (3, 5)])
        table = compute_next_hops(t)
        assert expressibility_witness(table, (0, 1, 2, 3, 4, 5)) is None

    def test_report_fraction(self, cycle5):
        ps = k_shortest_paths(cycle5, 0, 1, 2)
        report = expressibility_report(cycle5, ps)
        assert report.paths == 2
        assert report.non_expressible == 0
        assert report.witnesses == (1, 3)
        assert report.fraction == 0.0

    def test_sweep_on_leaf_spine(self):
        t = build_leaf_spine(4, 2)
        report = expressibility_sweep(t, Scheme.k_disjoint(2))
        assert report.paths > 0
        assert report.non_expressible == 0


class TestRoutingTable:
    def test_caches_path_sets(self, cycle4):
        routing = RoutingTable(cycle4, Scheme.k_disjoint(2))
        assert routing.paths(0, 2) is routing.paths(0, 2)

    def test_dispatch(self, cycle4):
        assert path_set(cycle4, 0, 2, Scheme.ecmp()).scheme.name == ECMP
        assert path_set(cycle4, 0, 2, Scheme.k_disjoint(2)).scheme.name == K_DISJOINT

    def test_average_path_length_grows_with_disjoint_paths(self):
        t = build(TopologySpec.rrg(TopologySpec.leaf_spine(6, 2), seed=2))
        ecmp = average_path_length(t, Scheme.ecmp())
        disjoint = average_path_length(t, Scheme.k_disjoint(3))
        assert disjoint >= ecmp
        # every switch of this rewiring hosts servers
        assert len(t.rack_switches) == t.switch_count
        assert ecmp == pytest.approx(nx.average_shortest_path_length(t.graph))

    def test_full_disjoint_sets_are_never_shorter(self):
        t = build(TopologySpec.rrg(TopologySpec.fat_tree(8, 1), seed=1))
        pairs = list(itertools.islice(itertools.permutations(range(t.switch_count), 2), 0, None, 97))
        ecmp = average_path_length(t, Scheme.ecmp(), pairs)
        shortest = average_path_length(t, Scheme.k_shortest(4), pairs)
        disjoint = average_path_length(t, Scheme.k_disjoint(4), pairs)
        assert ecmp <= shortest <= disjoint

    def test_disjoint_sets_shrink_on_degree_three_switches(self):
        t = build(TopologySpec.rrg(TopologySpec.leaf_spine(6, 2), seed=7))
        low = [u for u in range(t.switch_count) if t.degree[u] == 3]
        assert low
        for src in low:
            for dst in range(t.switch_count):
                if dst != src:
                    assert len(k_disjoint_paths(t, src, dst, 4)) <= 3
                    assert len(k_shortest_paths(t, src, dst, 4)) == 4


@pytest.mark.slow
def test_disjoint_paths_on_leaf_spine_rewiring_are_expressible():
    t = build(TopologySpec.rrg(TopologySpec.leaf_spine(24, 8), seed=1))
    routing = RoutingTable(t, Scheme.k_disjoint(4))
    report = expressibility_sweep(t, Scheme.k_disjoint(4), routing=routing)
    assert report.paths == 4 * 40 * 39
    assert report.fraction <= 0.005
    table = routing.next_hops
    for src, dst in itertools.islice(itertools.permutations(range(t.switch_count), 2), 0, None, 13):
        for path in routing.paths(src, dst).paths:
            waypoint = expressibility_witness(table, path)
            if waypoint is None:
                continue
            i = path.index(waypoint)
            assert table.distance(src, waypoint) == i
            assert table.distance(waypoint, dst) == len(path) - 1 - i
