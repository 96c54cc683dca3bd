import random
import statistics

import pytest
from hypothesis import given
from hypothesis import strategies as st

from scdpsim.engine import MS, SEC, make_stream
from scdpsim.experiment import Experiment
from scdpsim.ndp import n_packets
from scdpsim.topology import TopologyError, build_fattree
from scdpsim.workload import (KB, MB, OUTCAST_FAR, OUTCAST_NEAR, FlowSizeDistribution,
                              ScenarioSpec, build_scenario, by_proximity, calibrated_rate,
                              gen_arrivals, permutation_background, place_replicas, read_source)

TOPO = build_fattree(4)
BIG = build_fattree(10)


@given(st.integers(0, 2 ** 32))
def test_replica_placement_policy(seed):
    rng = random.Random(seed)
    client = rng.choice(list(BIG.hosts))
    r1, r2, r3 = place_replicas(client, BIG, rng)
    assert len({client, r1, r2, r3}) == 4
    assert BIG.rack_of(r2) == BIG.rack_of(r3)
    assert BIG.rack_of(r2) not in (BIG.rack_of(client), BIG.rack_of(r1))


def test_replica_placement_needs_three_racks():
    class TwoRacks:
        n_racks = 2

    with pytest.raises(TopologyError):
        place_replicas(0, TwoRacks(), random.Random(0))


def test_read_prefers_rack_local_replica():
    client = 0
    local = TOPO.hosts_in_rack(TOPO.rack_of(client))[1]
    assert read_source(client, [9, local, 14], TOPO, random.Random(0)) == local
    assert read_source(client, [9, 13, 14], TOPO, random.Random(0)) in (9, 13, 14)


@given(st.integers(0, 2 ** 32))
def test_permutation_background(seed):
    pairs = permutation_background(0.3, BIG, random.Random(seed))
    assert len(pairs) == 75  # 0.3 of 250 hosts
    srcs = [s for s, _ in pairs]
    dsts = [d for _, d in pairs]
    assert sorted(srcs) == sorted(dsts) and len(set(srcs)) == 75
    assert all(s != d for s, d in pairs)


def test_permutation_background_too_small():
    with pytest.raises(ValueError):
        permutation_background(0.01, TOPO, random.Random(0))


def test_arrivals_are_poisson():
    times = gen_arrivals(500.0, 20_000, random.Random(4))
    gaps = [b - a for a, b in zip([0] + times, times)]
    assert times == sorted(times)
    assert statistics.fmean(gaps) == pytest.approx(SEC / 500, rel=0.03)
    assert statistics.stdev(gaps) == pytest.approx(SEC / 500, rel=0.05)
    with pytest.raises(ValueError):
        gen_arrivals(0, 1, random.Random(0))


@pytest.mark.parametrize("name", ["web_search", "data_mining"])
def test_flow_size_means(name):
    dist = FlowSizeDistribution.named(name)
    target = {"web_search": 1.6 * MB, "data_mining": 7.4 * MB}[name]
    assert dist.mean() == pytest.approx(target, rel=1e-6)
    rng = random.Random(1)
    xs = [dist.sample(rng) for _ in range(40_000)]
    assert min(xs) >= 1 * KB
    small = sum(x < 10 * KB for x in xs) / len(xs)
    assert small == pytest.approx(dist.bins[0][2], abs=0.01)


def test_fixed_distribution():
    d = FlowSizeDistribution.named("fixed:70000")
    assert d.sample(random.Random(0)) == 70000 and d.mean() == 70000
    with pytest.raises(ValueError):
        FlowSizeDistribution.named("pareto")
    with pytest.raises(ValueError):
        FlowSizeDistribution.fixed(0)


def test_load_calibration():
    # 0.5 load of 16 hosts at 1 Gbps with 1 MB flows
    rate = calibrated_rate(0.5, MB, TOPO)
    assert rate == pytest.approx(0.5 * 16 * 1e9 / (MB * 8))
    spec = ScenarioSpec(scenario="realistic", sessions=10, rate=1000.0, background_load=0.4,
                        background_dist="fixed:100000")
    sc = build_scenario(spec, 3)
    span = (max(s.start for s in sc.sessions) + 50 * MS) / SEC
    offered = sum(b.size for b in sc.background) * 8 / span
    assert offered / (16 * 1e9) == pytest.approx(0.4, rel=0.1)


def test_scenarios_are_seed_deterministic():
    spec = ScenarioSpec(scenario="storage_write", sessions=30, background_fraction=0.3)
    a, b = build_scenario(spec, 7), build_scenario(spec, 7)
    assert a.sessions == b.sessions and a.background == b.background
    assert build_scenario(spec, 8).sessions != a.sessions
    with pytest.raises(ValueError):
        build_scenario(ScenarioSpec(scenario="bogus"))


def test_by_proximity_orders_by_hops():
    order = by_proximity(0, TOPO)
    hops = [TOPO.hop_count(h, 0) for h in order]
    assert hops == sorted(hops) and 0 not in order and hops[0] == 2


def test_incast_builder_wraps_hosts():
    sc = build_scenario(ScenarioSpec(scenario="incast", n_senders=32, request_size=70 * KB), 1)
    assert len(sc.sessions) == 32
    assert {s.dst for s in sc.sessions} == {0}
    assert {s.src for s in sc.sessions} == set(TOPO.hosts) - {0}
    assert all(s.start == 0 and s.size == 70 * KB for s in sc.sessions)


def test_outcast_builder():
    sc = build_scenario(ScenarioSpec(scenario="outcast", request_size=200 * KB), 1)
    near = [s for s in sc.sessions if s.tag == "near"]
    far = [s for s in sc.sessions if s.tag == "far"]
    assert len(near) == OUTCAST_NEAR and len(far) == OUTCAST_FAR
    assert all(TOPO.hop_count(s.src, s.dst) == 4 for s in near)
    assert all(TOPO.hop_count(s.src, s.dst) == 6 for s in far)
    # both receivers hang off one ToR
    assert TOPO.tor_of(near[0].dst) == TOPO.tor_of(far[0].dst)
    assert sc.path_policy == "pinned"


def test_convergence_builder():
    spec = ScenarioSpec(scenario="convergence", flows=5, interval_ns=20 * MS)
    sc = build_scenario(spec, 1)
    starts = [s.start for s in sc.sessions]
    assert starts == [i * 20 * MS for i in range(5)]
    assert all(s.stop - s.start == 9 * 20 * MS for s in sc.sessions)
    assert sc.measure_window == (80 * MS, 180 * MS)


def test_window_sweep_uses_four_hop_pairs():
    sc = build_scenario(ScenarioSpec(scenario="window_sweep", sessions=50), 2)
    assert all(TOPO.hop_count(s.src, s.dst) == 4 for s in sc.sessions)


def test_throttled_read_builder():
    sc = build_scenario(ScenarioSpec(scenario="storage_read", throttle_rate=0.1), 1)
    (read,) = sc.sessions
    assert sc.host_rates == {read.dst: 100_000_000} and read.dst in read.hosts


# -- replication cost on the wire --------------------------------------------

def _data_link_crossings(ex) -> int:
    return sum(n for (what, typ, _), n in ex.net.port_counters().items()
               if what == "queued" and typ == 0)


def test_replication_link_usage():
    client, chain = 0, [5, 9, 10]
    size = 300 * KB
    n = n_packets(size)
    hops = sum(TOPO.hop_count(a, b) for a, b in zip([client] + chain, chain))
    fan = sum(TOPO.hop_count(client, r) for r in chain)

    ex = Experiment(TOPO)
    sid = ex.open_ndp_daisy_chain(client, chain, size)
    ex.run()
    txs = ex.transfers[sid].senders
    assert [tx.num_sent - tx.retransmissions for tx in txs] == [n] * 3
    assert _data_link_crossings(ex) == sum(tx.num_sent * TOPO.hop_count(tx.host.node, tx.dst)
                                           for tx in txs)

    ex = Experiment(TOPO)
    sid = ex.open_ndp_multi_unicast(client, chain, size)
    ex.run()
    txs = ex.transfers[sid].senders
    assert [tx.num_sent - tx.retransmissions for tx in txs] == [n] * 3
    # three windows pushed at once overflow the client's queue, so some are resent
    assert _data_link_crossings(ex) == sum(tx.num_sent * TOPO.hop_count(client, tx.dst)
                                           for tx in txs) >= n * fan

    ex = Experiment(TOPO)
    sid = ex.open_one_to_many(client, chain, size)
    ex.run()
    tree = len(TOPO.build_multicast_tree(client, chain, group_id=1).edges)
    sent = ex.transfers[sid].senders[0].num_sent
    assert sent == n  # lossless: every symbol is useful to all three replicas
    assert _data_link_crossings(ex) == sent * tree
    assert tree < min(hops, fan)
