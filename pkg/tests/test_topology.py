import random
from collections import Counter

import networkx as nx
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

import oracles
from scdpsim.topology import FatTree, TopologyError, build_fattree, spray


def link_graph(topo):
    g = nx.Graph()
    g.add_edges_from(topo.links)
    return g


@pytest.mark.parametrize("k", [4, 6, 10])
def test_switch_and_host_counts_match_construction(k):
    topo = build_fattree(k)
    want = oracles.fattree_counts(k)
    assert topo.n_hosts == want["host"]
    assert topo.n_tor == want["edge"]
    assert topo.n_agg == want["agg"]
    assert topo.n_core == want["core"]


def test_k10_sizes():
    topo = build_fattree(10)
    assert (topo.n_hosts, topo.n_core, topo.n_agg) == (250, 25, 50)


def test_k4_sizes():
    topo = build_fattree(4)
    assert (topo.n_hosts, topo.n_core, topo.n_agg, topo.n_tor) == (16, 4, 8, 8)


@pytest.mark.parametrize("k", [3, 2, 5])
def test_bad_arity(k):
    with pytest.raises(TopologyError):
        build_fattree(k)


def test_built_graph_is_isomorphic_to_textbook_fattree():
    for k in (4, 6):
        assert nx.is_isomorphic(link_graph(build_fattree(k)), oracles.fattree_graph(k))


def test_link_defaults():
    topo = build_fattree(4)
    assert all(l.capacity == 10 ** 9 and l.delay == 10_000 for l in topo.links.values())
    assert len(topo.links) == 2 * 48


def test_same_rack_pair():
    paths = build_fattree(4).ecmp_paths(0, 1)
    assert len(paths) == 1 and len(paths[0]) - 1 == 2


def test_same_pod_pair():
    topo = build_fattree(4)
    paths = topo.ecmp_paths(0, 2)
    assert len(paths) == 2 and topo.hop_count(0, 2) == 4


def test_inter_pod_k10():
    topo = build_fattree(10)
    assert len(topo.ecmp_paths(0, 249)) == 25 and topo.hop_count(0, 249) == 6


def test_k6_inter_pod_pairs_have_nine_paths():
    # [DERIVED] networkx all_shortest_paths on the textbook graph gives 9
    topo = build_fattree(6)
    for src in range(0, 9):
        for dst in range(9, 54, 7):
            paths = topo.ecmp_paths(src, dst)
            assert len(paths) == 9 and all(len(p) == 7 for p in paths)


@pytest.mark.parametrize("k", [4, 6])
def test_ecmp_set_equals_all_shortest_paths(k):
    topo = build_fattree(k)
    g = link_graph(topo)
    rng = random.Random(k)
    for _ in range(40):
        src, dst = rng.sample(range(topo.n_hosts), 2)
        want = sorted(tuple(p) for p in nx.all_shortest_paths(g, src, dst))
        assert list(topo.ecmp_paths(src, dst)) == want


def test_path_errors():
    topo = build_fattree(4)
    with pytest.raises(TopologyError):
        topo.ecmp_paths(3, 3)
    with pytest.raises(TopologyError):
        topo.ecmp_paths(0, 99)


def tree_ok(topo, tree):
    g = nx.DiGraph(tree.edges)
    assert nx.is_arborescence(g)
    assert set(tree.members) <= set(g.nodes)
    assert all(nx.has_path(g, tree.root, m) for m in tree.members)
    for u, v in tree.edges:
        assert (u, v) in topo.links
    # leaves are exactly the members
    assert {n for n in g.nodes if g.out_degree(n) == 0} == set(tree.members)


def test_one_member_in_rack_is_the_two_hop_path():
    topo = build_fattree(4)
    tree = topo.build_multicast_tree(0, [1])
    assert tree.edges == [(0, topo.tor_of(0)), (topo.tor_of(0), 1)]


def test_hdfs_tree_beats_three_unicasts():
    # client 0; first replica in pod 1; second and third share a rack in pod 2
    topo = build_fattree(4)
    members = [5, 8, 9]
    tree = topo.build_multicast_tree(0, members)
    tree_ok(topo, tree)
    unicast_edges = sum(topo.hop_count(0, m) for m in members)
    assert len(tree.edges) < unicast_edges


def test_two_pod_tree_uses_one_core():
    topo = build_fattree(4)
    tree = topo.build_multicast_tree(0, [4, 6])
    cores = [n for n in tree.nodes() if topo.kind(n) == "core"]
    assert len(cores) == 1


def test_tree_variants_cover_all_cores():
    topo = build_fattree(4)
    cores = set()
    for a in range(2):
        for c in range(2):
            t = topo.build_multicast_tree(0, [8, 12], agg_index=a, core_index=c)
            tree_ok(topo, t)
            cores |= {n for n in t.nodes() if topo.kind(n) == "core"}
    assert cores == set(topo.cores)


def test_tree_errors():
    topo = build_fattree(4)
    with pytest.raises(TopologyError):
        topo.build_multicast_tree(0, [])
    with pytest.raises(TopologyError):
        topo.build_multicast_tree(0, [0, 1])


@given(st.integers(0, 53), st.sets(st.integers(0, 53), min_size=1, max_size=8))
def test_tree_invariants(root, members):
    members.discard(root)
    if not members:
        return
    topo = build_fattree(6)
    tree_ok(topo, topo.build_multicast_tree(root, members))


def test_spray_singleton():
    assert spray(("only",), random.Random(0)) == "only"


def test_spray_is_reproducible():
    paths = tuple(range(25))
    a = [spray(paths, random.Random(5)) for _ in range(3)]
    r1, r2 = random.Random(5), random.Random(5)
    assert [spray(paths, r1) for _ in range(50)] == [spray(paths, r2) for _ in range(50)]
    assert a[0] == a[1]


def test_spray_uniform_over_25_paths():
    rng = random.Random(11)
    paths = tuple(range(25))
    n = 10 ** 6
    hist = Counter(spray(paths, rng) for _ in range(n))
    for p in paths:
        assert abs(hist[p] / n - 0.04) < 0.002
    assert stats.chisquare([hist[p] for p in paths]).pvalue > 1e-3


def test_summary_lists_the_shape():
    text = FatTree(4).summary()
    assert "hosts 16" in text and "core 4" in text
