"""Traffic generation and canned scenarios.

Sizes use binary units throughout (KB = 1024 B, MB = 2**20 B).
"""

from __future__ import annotations

import math
import random
from dataclasses import asdict, dataclass, field

from scipy.optimize import brentq

from .engine import MS, SEC, US
from .topology import FatTree, TopologyError, build_fattree

KB = 1024
MB = 1024 * 1024

# (lower, upper, probability) per bin; upper None is tuned to hit the mean
WEB_SEARCH_BINS = ((1 * KB, 10 * KB, 0.19), (10 * KB, 100 * KB, 0.43),
                   (100 * KB, 1 * MB, 0.18), (1 * MB, None, 0.20))
DATA_MINING_BINS = ((1 * KB, 10 * KB, 0.78), (10 * KB, 100 * KB, 0.05),
                    (100 * KB, 1 * MB, 0.08), (1 * MB, None, 0.09))
TARGET_MEANS = {"web_search": 1.6 * MB, "data_mining": 7.4 * MB}


def _loguniform_mean(lo: float, hi: float) -> float:
    if hi <= lo:
        return lo
    return (hi - lo) / math.log(hi / lo)


class FlowSizeDistribution:
    """Binned flow sizes, log-uniform inside each bin."""

    def __init__(self, name: str, bins):
        if abs(sum(p for _, _, p in bins) - 1.0) > 1e-9:
            raise ValueError("bin probabilities must sum to 1")
        self.name = name
        self.bins = tuple((float(lo), float(hi), float(p)) for lo, hi, p in bins)
        self._cum = []
        acc = 0.0
        for _, _, p in self.bins:
            acc += p
            self._cum.append(acc)

    @classmethod
    def named(cls, name: str) -> "FlowSizeDistribution":
        if name == "web_search":
            return cls.tuned(name, WEB_SEARCH_BINS, TARGET_MEANS[name])
        if name == "data_mining":
            return cls.tuned(name, DATA_MINING_BINS, TARGET_MEANS[name])
        if name.startswith("fixed:"):
            return cls.fixed(int(name.split(":", 1)[1]))
        raise ValueError(f"unknown flow size distribution {name!r}")

    @classmethod
    def fixed(cls, size: int) -> "FlowSizeDistribution":
        if size <= 0:
            raise ValueError("flow size must be positive")
        return cls(f"fixed:{size}", ((size, size, 1.0),))

    @classmethod
    def tuned(cls, name: str, bins, mean: float) -> "FlowSizeDistribution":
        """Choose the open top bin's upper bound so the overall mean is ``mean``."""
        known = sum(p * _loguniform_mean(lo, hi) for lo, hi, p in bins if hi is not None)
        lo_top, _, p_top = next(b for b in bins if b[1] is None)
        want = (mean - known) / p_top
        upper = brentq(lambda u: _loguniform_mean(lo_top, u) - want, lo_top * 1.0001, 1e13)
        return cls(name, tuple((lo, upper if hi is None else hi, p) for lo, hi, p in bins))

    def mean(self) -> float:
        return sum(p * _loguniform_mean(lo, hi) for lo, hi, p in self.bins)

    def sample(self, rng: random.Random) -> int:
        u = rng.random()
        for (lo, hi, _), c in zip(self.bins, self._cum):
            if u < c:
                break
        if hi <= lo:
            return int(lo)
        return max(1, int(math.exp(rng.uniform(math.log(lo), math.log(hi)))))


def gen_arrivals(rate: float, n: int, rng: random.Random, start: int = 0) -> list[int]:
    """``n`` Poisson arrival times (ns) with aggregate rate ``rate`` per second."""
    if rate <= 0:
        raise ValueError("arrival rate must be positive")
    out, t = [], float(start)
    for _ in range(n):
        t += rng.expovariate(rate) * SEC
        out.append(int(t))
    return out


def place_replicas(client: int, topo: FatTree, rng: random.Random) -> list[int]:
    """Three replica hosts following the HDFS default policy.

    The first replica is a random node other than the client; the second
    sits in a rack that holds neither the client nor the first replica; the
    third is another node of the second's rack.
    """
    if topo.n_racks < 3:
        raise TopologyError("replica placement needs at least three racks")
    hosts = [h for h in topo.hosts if h != client]
    r1 = rng.choice(hosts)
    racks = [r for r in range(topo.n_racks)
             if r not in (topo.rack_of(client), topo.rack_of(r1))]
    rack = rng.choice(racks)
    r2, r3 = rng.sample(topo.hosts_in_rack(rack), 2)
    return [r1, r2, r3]


def read_source(client: int, replicas: list[int], topo: FatTree, rng: random.Random) -> int:
    """Same-rack replica when there is one, otherwise a random replica."""
    local = [r for r in replicas if topo.rack_of(r) == topo.rack_of(client)]
    if local:
        return local[0]
    return rng.choice(replicas)


def permutation_background(fraction: float, topo: FatTree,
                           rng: random.Random) -> list[tuple[int, int]]:
    """Pairs ``(src, dst)`` over a random ``fraction`` of hosts, no fixed points."""
    m = int(round(fraction * topo.n_hosts))
    if m < 2:
        raise ValueError("background fraction selects fewer than two hosts")
    chosen = rng.sample(list(topo.hosts), m)
    # a shuffled cycle is a permutation with no host mapped to itself
    return [(chosen[i], chosen[(i + 1) % m]) for i in range(m)]


def by_proximity(dst: int, topo: FatTree, candidates=None) -> list[int]:
    """Hosts ordered same rack first, then same pod, then the rest."""
    pool = [h for h in (candidates if candidates is not None else topo.hosts) if h != dst]
    return sorted(pool, key=lambda h: (topo.hop_count(h, dst), h))


def calibrated_rate(load: float, mean_size: float, topo: FatTree) -> float:
    """Flow arrivals per second offering ``load`` of the total host access capacity."""
    return load * topo.n_hosts * topo.link_capacity / (mean_size * 8)


# four-hop and six-hop flow counts of the outcast pattern
OUTCAST_NEAR = 2
OUTCAST_FAR = 12

SCENARIOS = ("storage_write", "storage_read", "realistic", "short_flows", "incast",
             "outcast", "convergence", "window_sweep", "unicast")
PROTOCOLS = ("scdp", "ndp", "ndp_plus")


@dataclass
class ScenarioSpec:
    scenario: str = "realistic"
    k: int = 4
    link_capacity: int = 1_000_000_000
    link_delay_ns: int = 10 * US
    sessions: int = 200
    rate: float = 200.0  # aggregate sessions per second
    size_dist: str = "web_search"
    request_size: int = 1 * MB
    background_fraction: float = 0.0
    background_load: float = 0.0
    background_dist: str = "web_search"
    write_mode: str = "daisy_chain"  # NDP writes: daisy_chain | multi_unicast
    read_ahead: bool = False  # NDP reads: fetch thirds from all replicas
    n_senders: int = 8
    throttle_rate: float = 1.0  # uplink rate factor of the throttled replica
    interval_ns: int = 20 * MS
    flows: int = 5
    placement: str = "any"  # any | intra_pod
    horizon_ns: int = 2 * SEC

    def echo(self) -> dict:
        return asdict(self)


@dataclass
class SessionPlan:
    kind: str  # unicast | write | read
    src: int
    dst: int
    size: int
    start: int
    hosts: tuple = ()
    stop: int | None = None
    tag: str = ""


@dataclass
class Scenario:
    spec: ScenarioSpec
    topo: FatTree
    sessions: list[SessionPlan] = field(default_factory=list)
    background: list[SessionPlan] = field(default_factory=list)
    path_policy: str = "spray"
    host_rates: dict = field(default_factory=dict)
    groups: dict = field(default_factory=dict)
    measure_window: tuple | None = None


def _pair(topo: FatTree, rng: random.Random, placement: str) -> tuple[int, int]:
    src = rng.choice(list(topo.hosts))
    if placement == "intra_pod":
        pool = [h for h in topo.hosts if topo.pod_of(h) == topo.pod_of(src)
                and topo.rack_of(h) != topo.rack_of(src)]
    else:
        pool = [h for h in topo.hosts if h != src]
    return src, rng.choice(pool)


def _background(sc: Scenario, rngs, until: int) -> None:
    spec, topo = sc.spec, sc.topo
    if spec.background_fraction > 0:
        # long-running flows, sized so that none can finish before the horizon
        size = int(until / SEC * topo.link_capacity / 8) * 2 + MB
        for src, dst in permutation_background(spec.background_fraction, topo,
                                               rngs["background"]):
            sc.background.append(SessionPlan("unicast", src, dst, size, 0, tag="background"))
    if spec.background_load > 0:
        dist = FlowSizeDistribution.named(spec.background_dist)
        rate = calibrated_rate(spec.background_load, dist.mean(), topo)
        rng = rngs["background"]
        t = 0.0
        while True:
            t += rng.expovariate(rate) * SEC
            if t >= until:
                break
            src, dst = _pair(topo, rng, "any")
            sc.background.append(SessionPlan("unicast", src, dst, dist.sample(rng), int(t),
                                             tag="background"))


def build_scenario(spec: ScenarioSpec, seed: int = 0) -> Scenario:
    """Expand a spec into concrete sessions (deterministic in ``seed``)."""
    from .engine import make_stream

    if spec.scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {spec.scenario!r}")
    topo = build_fattree(spec.k, spec.link_capacity, spec.link_delay_ns)
    rngs = {name: make_stream(seed, name)
            for name in ("arrivals", "sizes", "placement", "background")}
    sc = Scenario(spec, topo)
    build = _BUILDERS[spec.scenario]
    build(sc, rngs)
    return sc


def _last_start(sc: Scenario) -> int:
    return max((s.start for s in sc.sessions), default=0)


def _build_storage(sc: Scenario, rngs, kind: str) -> None:
    spec, topo = sc.spec, sc.topo
    starts = gen_arrivals(spec.rate, spec.sessions, rngs["arrivals"])
    rng = rngs["placement"]
    for t in starts:
        client = rng.choice(list(topo.hosts))
        replicas = tuple(place_replicas(client, topo, rng))
        src = read_source(client, list(replicas), topo, rng)
        sc.sessions.append(SessionPlan(kind, client, src, spec.request_size, t, replicas))
    _background(sc, rngs, _last_start(sc) + 50 * MS)


def _build_realistic(sc: Scenario, rngs) -> None:
    spec, topo = sc.spec, sc.topo
    dist = FlowSizeDistribution.named(spec.size_dist)
    starts = gen_arrivals(spec.rate, spec.sessions, rngs["arrivals"])
    for t in starts:
        src, dst = _pair(topo, rngs["placement"], spec.placement)
        sc.sessions.append(SessionPlan("unicast", src, dst, dist.sample(rngs["sizes"]), t))
    _background(sc, rngs, _last_start(sc) + 50 * MS)


def _build_short_flows(sc: Scenario, rngs) -> None:
    spec, topo = sc.spec, sc.topo
    starts = gen_arrivals(spec.rate, spec.sessions, rngs["arrivals"])
    # warm the background up before the measured flows begin
    warm = 20 * MS
    for t in starts:
        src, dst = _pair(topo, rngs["placement"], spec.placement)
        sc.sessions.append(SessionPlan("unicast", src, dst, spec.request_size, t + warm))
    _background(sc, rngs, _last_start(sc) + 50 * MS)


def _build_unicast(sc: Scenario, rngs, placement: str | None = None) -> None:
    spec, topo = sc.spec, sc.topo
    starts = gen_arrivals(spec.rate, spec.sessions, rngs["arrivals"])
    for t in starts:
        src, dst = _pair(topo, rngs["placement"], placement or spec.placement)
        sc.sessions.append(SessionPlan("unicast", src, dst, spec.request_size, t))
    _background(sc, rngs, _last_start(sc) + 50 * MS)


def _build_incast(sc: Scenario, rngs) -> None:
    spec, topo = sc.spec, sc.topo
    dst = 0
    order = by_proximity(dst, topo)
    for i in range(spec.n_senders):
        # more senders than hosts wrap around: a host then runs several sessions
        src = order[i % len(order)]
        sc.sessions.append(SessionPlan("unicast", src, dst, spec.request_size, 0))
    _background(sc, rngs, 50 * MS)


def _build_outcast(sc: Scenario, rngs) -> None:
    topo = sc.topo
    spec = sc.spec
    rack = topo.hosts_in_rack(0)
    near_rx, far_rx = rack[0], rack[1]
    pod = topo.pod_of(near_rx)
    near = [h for h in topo.hosts if topo.pod_of(h) == pod and topo.rack_of(h) != 0]
    far = [h for h in topo.hosts if topo.pod_of(h) != pod]
    # small trees have fewer far hosts than flows; hosts then carry several
    for i in range(OUTCAST_NEAR):
        sc.sessions.append(SessionPlan("unicast", near[i % len(near)], near_rx,
                                       spec.request_size, 0, tag="near"))
    for i in range(OUTCAST_FAR):
        sc.sessions.append(SessionPlan("unicast", far[i % len(far)], far_rx,
                                       spec.request_size, 0, tag="far"))
    # every flow takes the lowest-numbered path, so both groups meet on one
    # aggregation-to-ToR link
    sc.path_policy = "pinned"
    sc.groups = {"near": OUTCAST_NEAR, "far": OUTCAST_FAR}


def _build_convergence(sc: Scenario, rngs) -> None:
    spec, topo = sc.spec, sc.topo
    dst = 0
    senders = by_proximity(dst, topo)[: spec.flows]
    I = spec.interval_ns
    duration = (2 * spec.flows - 1) * I
    size = int(duration / SEC * topo.link_capacity / 8) * 2 + MB
    for i, src in enumerate(senders):
        sc.sessions.append(SessionPlan("unicast", src, dst, size, i * I, stop=i * I + duration,
                                       tag=f"flow{i}"))
    # every flow is active between the last start and the first stop
    sc.measure_window = ((spec.flows - 1) * I, duration)


def _build_window_sweep(sc: Scenario, rngs) -> None:
    # four-hop pairs: their bandwidth-delay product is below the default window
    placement = "intra_pod" if sc.spec.placement == "any" else sc.spec.placement
    _build_unicast(sc, rngs, placement)


def _build_storage_read(sc: Scenario, rngs) -> None:
    spec = sc.spec
    if spec.throttle_rate < 1.0:
        # a single read with one replica slowed down (load-balancing probe)
        topo = sc.topo
        client = 0
        replicas = tuple(by_proximity(client, topo)[:3])
        slow = replicas[0]
        sc.host_rates = {slow: int(topo.link_capacity * spec.throttle_rate)}
        sc.sessions.append(SessionPlan("read", client, slow, spec.request_size, 0, replicas))
        sc.groups = {"throttled": slow}
        return
    _build_storage(sc, rngs, "read")


_BUILDERS = {
    "storage_write": lambda sc, r: _build_storage(sc, r, "write"),
    "storage_read": _build_storage_read,
    "realistic": _build_realistic,
    "short_flows": _build_short_flows,
    "incast": _build_incast,
    "outcast": _build_outcast,
    "convergence": _build_convergence,
    "window_sweep": _build_window_sweep,
    "unicast": _build_unicast,
}
