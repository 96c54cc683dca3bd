"""FatTree construction, equal-cost path sets and multicast trees."""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .engine import US


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class Link:
    src: int
    dst: int
    capacity: int  # bits/s
    delay: int  # ns


@dataclass
class MulticastTree:
    group_id: int
    root: int
    members: tuple[int, ...]
    children: dict[int, tuple[int, ...]]

    @property
    def edges(self) -> list[tuple[int, int]]:
        return [(u, v) for u, kids in self.children.items() for v in kids]

    def nodes(self) -> set[int]:
        out = {self.root}
        for u, v in self.edges:
            out.add(u)
            out.add(v)
        return out


@dataclass
class FatTree:
    """A k-ary FatTree with single-homed hosts.

    Node ids are dense integers: hosts first, then ToR, aggregation and
    core switches. All links default to one capacity and delay.
    """

    k: int
    link_capacity: int = 1_000_000_000
    link_delay: int = 10 * US
    links: dict[tuple[int, int], Link] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        k = self.k
        if k < 4 or k % 2:
            raise TopologyError(f"FatTree arity must be even and >= 4, got {k}")
        self.half = k // 2
        self.n_hosts = k ** 3 // 4
        self.n_tor = k * self.half
        self.n_agg = k * self.half
        self.n_core = self.half ** 2
        self._tor0 = self.n_hosts
        self._agg0 = self._tor0 + self.n_tor
        self._core0 = self._agg0 + self.n_agg
        self.n_nodes = self._core0 + self.n_core
        self._paths: dict[tuple[int, int], tuple[tuple[int, ...], ...]] = {}
        if not self.links:
            self._wire()

    # -- construction -------------------------------------------------

    def _add(self, u: int, v: int) -> None:
        self.links[(u, v)] = Link(u, v, self.link_capacity, self.link_delay)
        self.links[(v, u)] = Link(v, u, self.link_capacity, self.link_delay)

    def _wire(self) -> None:
        h = self.half
        for host in self.hosts:
            self._add(host, self.tor_of(host))
        for pod in range(self.k):
            for t in range(h):
                for a in range(h):
                    self._add(self.tor_id(pod, t), self.agg_id(pod, a))
            for a in range(h):
                for c in range(h):
                    self._add(self.agg_id(pod, a), self.core_id(a, c))

    def override_link(self, u: int, v: int, capacity: int | None = None, delay: int | None = None):
        old = self.links[(u, v)]
        self.links[(u, v)] = Link(
            u, v,
            old.capacity if capacity is None else capacity,
            old.delay if delay is None else delay,
        )

    # -- addressing ---------------------------------------------------

    @property
    def hosts(self) -> range:
        return range(self.n_hosts)

    @property
    def tors(self) -> range:
        return range(self._tor0, self._agg0)

    @property
    def aggs(self) -> range:
        return range(self._agg0, self._core0)

    @property
    def cores(self) -> range:
        return range(self._core0, self.n_nodes)

    def tor_id(self, pod: int, index: int) -> int:
        return self._tor0 + pod * self.half + index

    def agg_id(self, pod: int, index: int) -> int:
        return self._agg0 + pod * self.half + index

    def core_id(self, group: int, index: int) -> int:
        return self._core0 + group * self.half + index

    def is_host(self, node: int) -> bool:
        return 0 <= node < self.n_hosts

    def kind(self, node: int) -> str:
        if node < self._tor0:
            return "host"
        if node < self._agg0:
            return "tor"
        if node < self._core0:
            return "agg"
        return "core"

    def pod_of(self, host: int) -> int:
        return host // (self.half * self.half)

    def rack_of(self, host: int) -> int:
        """Global rack (ToR) index of a host."""
        return host // self.half

    def tor_of(self, host: int) -> int:
        return self._tor0 + self.rack_of(host)

    def hosts_in_rack(self, rack: int) -> list[int]:
        return list(range(rack * self.half, (rack + 1) * self.half))

    @property
    def n_racks(self) -> int:
        return self.n_tor

    def _check_host(self, host: int) -> None:
        if not self.is_host(host):
            raise TopologyError(f"unknown host {host}")

    # -- paths --------------------------------------------------------

    def ecmp_paths(self, src: int, dst: int) -> tuple[tuple[int, ...], ...]:
        """All shortest paths from ``src`` to ``dst``, lexicographically ordered."""
        key = (src, dst)
        cached = self._paths.get(key)
        if cached is not None:
            return cached
        self._check_host(src)
        self._check_host(dst)
        if src == dst:
            raise TopologyError("source and destination must differ")
        h = self.half
        ts, td = self.tor_of(src), self.tor_of(dst)
        ps, pd = self.pod_of(src), self.pod_of(dst)
        if ts == td:
            paths = [(src, ts, dst)]
        elif ps == pd:
            paths = [(src, ts, self.agg_id(ps, a), td, dst) for a in range(h)]
        else:
            paths = [
                (src, ts, self.agg_id(ps, a), self.core_id(a, c), self.agg_id(pd, a), td, dst)
                for a in range(h)
                for c in range(h)
            ]
        result = tuple(sorted(paths))
        self._paths[key] = result
        return result

    def hop_count(self, src: int, dst: int) -> int:
        return len(self.ecmp_paths(src, dst)[0]) - 1

    def build_multicast_tree(
        self,
        root: int,
        members,
        group_id: int = 0,
        agg_index: int = 0,
        core_index: int = 0,
    ) -> MulticastTree:
        """Shortest-path tree from ``root`` to ``members``.

        Every branch climbs through aggregation index ``agg_index`` and, when
        pods differ, core ``(agg_index, core_index)``, so shared upstream
        edges collapse into one. The default picks the lowest-numbered
        switches.
        """
        members = tuple(sorted(set(members)))
        if not members:
            raise TopologyError("multicast group needs at least one member")
        self._check_host(root)
        if root in members:
            raise TopologyError("root cannot be a member of its own group")
        for m in members:
            self._check_host(m)
        a, c = agg_index % self.half, core_index % self.half
        pr, tr = self.pod_of(root), self.tor_of(root)
        kids: dict[int, set[int]] = {}

        def edge(u, v):
            kids.setdefault(u, set()).add(v)

        for m in members:
            tm, pm = self.tor_of(m), self.pod_of(m)
            edge(root, tr)
            if tm == tr:
                edge(tr, m)
                continue
            up = self.agg_id(pr, a)
            edge(tr, up)
            if pm == pr:
                edge(up, tm)
            else:
                core = self.core_id(a, c)
                down = self.agg_id(pm, a)
                edge(up, core)
                edge(core, down)
                edge(down, tm)
            edge(tm, m)
        children = {u: tuple(sorted(vs)) for u, vs in sorted(kids.items())}
        return MulticastTree(group_id, root, members, children)

    def summary(self) -> str:
        lines = [
            f"fattree k={self.k}",
            f"hosts {self.n_hosts}",
            f"tor {self.n_tor}",
            f"aggregation {self.n_agg}",
            f"core {self.n_core}",
            f"links {len(self.links) // 2} (bidirectional)",
            f"link_capacity_bps {self.link_capacity}",
            f"link_delay_ns {self.link_delay}",
        ]
        return "\n".join(lines) + "\n"


def build_fattree(k: int, link_capacity: int = 1_000_000_000, link_delay: int = 10 * US) -> FatTree:
    return FatTree(k, link_capacity, link_delay)


def spray(path_set, rng: random.Random):
    """Pick one path uniformly at random."""
    n = len(path_set)
    if n == 1:
        return path_set[0]
    return path_set[int(rng.random() * n)]
