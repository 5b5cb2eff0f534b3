import pytest

from src.core.topology import IMPORTED, Topology, build_fat_tree, build_leaf_spine


def make_topology(links, servers=None, n=None, name=''):
    """Hand-built switch graph; one server per switch unless servers is given"""
    n = n if n is not None else 1 + max(max(a, b) for a, b in links)
    servers = list(servers) if servers is not None else [1] * n
    degree = [0] * n
    for a, b in links:
        degree[a] += 1
        degree[b] += 1
    ports = [d + s for d, s in zip(degree, servers)]
    return Topology(kind=IMPORTED, ports_per_switch=tuple(ports), servers_at=tuple(servers),
                    links=tuple(sorted((min(a, b), max(a, b)) for a, b in links)),
                    radix=max(ports), name=name or f"graph{n}")


@pytest.fixture
def cycle4():
    return make_topology([(0, 1), (1, 2), (2, 3), (3, 0)], name='cycle4')


@pytest.fixture
def cycle5():
    return make_topology([(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)], name='cycle5')


@pytest.fixture
def k4():
    return make_topology([(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)], name='k4')


@pytest.fixture
def path3():
    return make_topology([(0, 1), (1, 2)], name='path3')


@pytest.fixture
def two_cliques():
    """Two 4-cliques {0..3} and {4..7} joined by the link 3-4"""
    links = [(a, b) for a in range(4) for b in range(a + 1, 4)]
    links += [(a, b) for a in range(4, 8) for b in range(a + 1, 8)]
    links.append((3, 4))
    return make_topology(links, name='two_cliques')


@pytest.fixture
def leaf_spine_2_2():
    return build_leaf_spine(2, 2)


@pytest.fixture
def fat_tree_4():
    return build_fat_tree(4, 1)
