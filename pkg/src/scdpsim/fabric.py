"""Packets, output-queued switch ports, switches, hosts and the network.

A port owns one header/pull queue plus ``n`` strict-priority data queues
that share a single packet budget. Symbols that do not fit are trimmed to
headers; headers that do not fit are dropped. The port alternates between
the header queue and the data group with weighted round-robin quanta.
"""

from __future__ import annotations

from collections import Counter, deque
from dataclasses import dataclass
from enum import IntEnum
from typing import Callable

from .engine import SEC, Simulator
from .topology import FatTree, MulticastTree, spray

HEADER_BYTES = 64
MTU = 1500


class PacketType(IntEnum):
    SMBL = 0
    HDR = 1
    PULL = 2


class Mode(IntEnum):
    UNICAST = 0
    ONE_TO_MANY = 1
    MANY_TO_ONE = 2


class Outcome(IntEnum):
    QUEUED = 0
    TRIMMED = 1
    DROPPED = 2


@dataclass(frozen=True)
class SessionOpts:
    """Options carried by syn-flagged packets."""

    mode: Mode
    total_length: int  # F, bytes
    num_blocks: int  # Z
    symbol_size: int  # T, bytes


class Packet:
    __slots__ = (
        "typ", "pri", "sid", "src", "dst", "sbn", "esi", "seq", "syn", "fin",
        "opts", "size", "route", "hop", "tree", "payload", "sender", "nack", "proto",
    )

    def __init__(self, typ, sid, src, dst, *, pri=0, sbn=0, esi=0, seq=0, syn=False,
                 fin=False, opts=None, size=HEADER_BYTES, payload=None, sender=0,
                 nack=-1, proto="scdp"):
        self.typ = typ
        self.pri = pri
        self.sid = sid
        self.src = src
        self.dst = dst
        self.sbn = sbn
        self.esi = esi
        self.seq = seq
        self.syn = syn
        self.fin = fin
        self.opts = opts if syn else None
        self.size = size
        self.route = None
        self.hop = 0
        self.tree = None
        self.payload = payload
        self.sender = sender
        self.nack = nack
        self.proto = proto

    def clone(self) -> "Packet":
        p = Packet.__new__(Packet)
        for name in Packet.__slots__:
            setattr(p, name, getattr(self, name))
        return p

    def trim(self) -> None:
        """Strip the payload; header fields (including opts) survive."""
        self.typ = PacketType.HDR
        self.size = HEADER_BYTES
        self.payload = None

    def __repr__(self):
        return (f"Packet({self.typ.name} sid={self.sid} {self.src}->{self.dst} "
                f"sbn={self.sbn} esi={self.esi} seq={self.seq} pri={self.pri})")


TRIM_POLICIES = ("arrival", "lowest_priority")


class SwitchPort:
    """Output port feeding one directed link."""

    def __init__(self, sim: Simulator, node: int, peer: int, capacity: int, delay: int, *,
                 data_budget: float = 20, header_capacity: float = 100, n_data: int = 5,
                 wrr: tuple[int, int] = (1, 1), audit=None, trim_policy: str = "arrival"):
        if trim_policy not in TRIM_POLICIES:
            raise ValueError(f"unknown trim policy {trim_policy!r}")
        self.sim = sim
        self.trim_lowest = trim_policy == "lowest_priority"
        self.node = node
        self.peer = peer
        self.capacity = capacity
        self.delay = delay
        self.data_budget = data_budget
        self.header_capacity = header_capacity
        self.header_queue: deque[Packet] = deque()
        self.data_queues: list[deque[Packet]] = [deque() for _ in range(n_data)]
        self.n_data = n_data
        self.data_count = 0
        self.w_hdr, self.w_data = wrr
        self._hdr_turn = True
        self._served = 0
        self.busy_until = 0
        self.busy = False
        self.deliver: Callable[[Packet], None] | None = None
        self.audit = audit
        self.counters: Counter = Counter()
        self.busy_ns = 0
        self._ser: dict[int, int] = {}
        self.loss: Callable[[Packet], bool] | None = None  # test hook

    def serialization(self, size: int) -> int:
        ns = self._ser.get(size)
        if ns is None:
            ns = size * 8 * SEC // self.capacity
            self._ser[size] = ns
        return ns

    def occupancy(self) -> tuple[int, int]:
        return len(self.header_queue), self.data_count

    def enqueue(self, pkt: Packet) -> Outcome:
        if self.loss is not None and self.loss(pkt):
            self.counters["dropped", int(pkt.typ), pkt.pri] += 1
            if self.audit is not None:
                self.audit.on_drop(pkt)
            return Outcome.DROPPED
        if pkt.typ == PacketType.SMBL:
            if self.data_count < self.data_budget:
                pri = pkt.pri
                if pri >= self.n_data:
                    pri = pkt.pri = self.n_data - 1
                self.data_queues[pri].append(pkt)
                self.data_count += 1
                self.counters["queued", 0, pri] += 1
                outcome = Outcome.QUEUED
            else:
                if self.trim_lowest:
                    pkt = self._push_out(pkt)
                self.counters["trimmed", 0, pkt.pri] += 1
                pkt.trim()
                if self.audit is not None:
                    self.audit.on_trim(pkt)
                outcome = self._enqueue_header(pkt, Outcome.TRIMMED)
        else:
            outcome = self._enqueue_header(pkt, Outcome.QUEUED)
        if not self.busy and outcome != Outcome.DROPPED:
            self._transmit()
        return outcome

    def _push_out(self, pkt: Packet) -> Packet:
        """Queue ``pkt`` in place of the newest packet of a lower-priority band.

        Returns the packet to trim: the evicted one, or ``pkt`` itself when
        nothing queued has lower priority.
        """
        pri = min(pkt.pri, self.n_data - 1)
        for band in range(self.n_data - 1, pri, -1):
            q = self.data_queues[band]
            if q:
                victim = q.pop()
                pkt.pri = pri
                self.data_queues[pri].append(pkt)
                self.counters["queued", 0, pri] += 1
                return victim
        return pkt

    def _enqueue_header(self, pkt: Packet, ok: Outcome) -> Outcome:
        if len(self.header_queue) >= self.header_capacity:
            self.counters["dropped", int(pkt.typ), pkt.pri] += 1
            if self.audit is not None:
                self.audit.on_drop(pkt)
            return Outcome.DROPPED
        self.header_queue.append(pkt)
        if ok == Outcome.QUEUED:
            self.counters["queued", int(pkt.typ), pkt.pri] += 1
        return ok

    def _pop_data(self) -> Packet:
        for q in self.data_queues:
            if q:
                self.data_count -= 1
                return q.popleft()
        raise RuntimeError("data count out of sync")

    def dequeue(self) -> Packet | None:
        """Pick the next packet by WRR between the header and data classes."""
        hq = self.header_queue
        if hq and self.data_count:
            self._served += 1
            if self._hdr_turn:
                if self._served >= self.w_hdr:
                    self._hdr_turn, self._served = False, 0
                return hq.popleft()
            if self._served >= self.w_data:
                self._hdr_turn, self._served = True, 0
            return self._pop_data()
        if hq:
            return hq.popleft()
        if self.data_count:
            return self._pop_data()
        return None

    def _transmit(self) -> None:
        pkt = self.dequeue()
        if pkt is None:
            self.busy = False
            return
        self.busy = True
        now = self.sim._now
        ser = self.serialization(pkt.size)
        self.busy_until = now + ser
        self.busy_ns += ser
        self.sim.post(now + ser, self._tx_done)
        self.sim.post(now + ser + self.delay, self.deliver, pkt)

    def _tx_done(self) -> None:
        self._transmit()


class Switch:
    def __init__(self, node: int, audit=None):
        self.node = node
        self.audit = audit

    def receive(self, pkt: Packet) -> None:
        tree = pkt.tree
        if tree is None:
            port = pkt.route[pkt.hop]
            pkt.hop += 1
            port.enqueue(pkt)
            return
        ports = tree[self.node]
        n = len(ports)
        if n > 1 and self.audit is not None:
            self.audit.on_replicate(pkt, n - 1)
        for i in range(1, n):
            ports[i].enqueue(pkt.clone())
        ports[0].enqueue(pkt)


class Host:
    """End host: NIC uplink, endpoint demux and a paced pull queue."""

    def __init__(self, net: "Network", node: int):
        self.net = net
        self.node = node
        self.sim = net.sim
        self.uplink: SwitchPort | None = None
        self.downlink_capacity = 0
        self.senders: dict[int, object] = {}
        self.receivers: dict[int, object] = {}
        self.pull_queue: deque = deque()
        self._pacer_armed = False
        self._next_pull = 0
        self.pull_interval = 0
        self.stale = 0
        # last arrival time of data (symbol or trimmed header) per priority band
        self.last_data_rx: list[int] = [-1] * net.config.n_data_queues

    def send(self, pkt: Packet, dst: int | None = None) -> None:
        dst = pkt.dst if dst is None else dst
        pkt.route = self.net.route(self.node, dst)
        pkt.hop = 1
        self.net.audit.on_send(pkt)
        pkt.route[0].enqueue(pkt)

    def multicast(self, pkt: Packet, trees) -> None:
        """Send along one of the group's equal-cost trees, chosen per packet."""
        tree_ports = spray(trees, self.net.rng)
        pkt.tree = tree_ports
        pkt.route = None
        self.net.audit.on_send(pkt)
        ports = tree_ports[self.node]
        for port in ports[1:]:
            port.enqueue(pkt.clone())
        ports[0].enqueue(pkt)

    def receive(self, pkt: Packet) -> None:
        audit = self.net.audit
        if pkt.typ == PacketType.PULL:
            audit.on_pull_delivered(pkt)
            ep = self.senders.get(pkt.sid)
        else:
            audit.on_deliver(pkt)
            self.last_data_rx[min(pkt.pri, len(self.last_data_rx) - 1)] = self.sim._now
            ep = self.receivers.get(pkt.sid)
        if ep is None:
            self.stale += 1
            return
        ep.on_packet(pkt)

    def outranked(self, pri: int, since: int) -> bool:
        """Did data of a priority above ``pri`` arrive at or after ``since``?"""
        return any(t >= since for t in self.last_data_rx[:pri])

    # -- pull pacing ---------------------------------------------------

    def enqueue_pull(self, pkt: Packet, owner) -> None:
        self.pull_queue.append((pkt, owner))
        if not self._pacer_armed:
            self._pacer_armed = True
            self.sim.post(max(self.sim._now, self._next_pull), self._pace)

    def _pace(self) -> None:
        q = self.pull_queue
        while q:
            pkt, owner = q.popleft()
            if owner.closed:
                continue
            self.net.audit.on_pull_sent(pkt)
            self.send_control(pkt)
            owner.on_pull_departed(pkt)
            now = self.sim._now
            self._next_pull = now + self.pull_interval
            if q:
                self.sim.post(self._next_pull, self._pace)
                return
            break
        self._pacer_armed = False

    def send_control(self, pkt: Packet) -> None:
        pkt.route = self.net.route(self.node, pkt.dst)
        pkt.hop = 1
        pkt.route[0].enqueue(pkt)


@dataclass
class FabricConfig:
    buffer_packets: int = 20
    header_queue_packets: int = 100
    n_data_queues: int = 5
    wrr_header: int = 1
    wrr_data: int = 1
    symbol_wire_bytes: int = MTU
    path_policy: str = "spray"  # spray | pinned
    trim_policy: str = "arrival"  # arrival | lowest_priority


class Network:
    """Instantiated topology: ports on every directed link, switches, hosts."""

    def __init__(self, sim: Simulator, topo: FatTree, config: FabricConfig | None = None,
                 audit=None, host_rates: dict[int, int] | None = None):
        from .metrics import Audit

        self.sim = sim
        self.topo = topo
        self.config = config or FabricConfig()
        self.audit = audit if audit is not None else Audit()
        self.rng = sim.rng("spraying")
        cfg = self.config
        host_rates = host_rates or {}
        self.switches = {n: Switch(n, self.audit) for n in range(topo.n_hosts, topo.n_nodes)}
        self.hosts = {h: Host(self, h) for h in topo.hosts}
        self.ports: dict[tuple[int, int], SwitchPort] = {}
        for (u, v), link in topo.links.items():
            if topo.is_host(u):
                cap = host_rates.get(u, link.capacity)
                port = SwitchPort(sim, u, v, cap, link.delay, data_budget=float("inf"),
                                  header_capacity=float("inf"), n_data=cfg.n_data_queues,
                                  wrr=(cfg.wrr_header, cfg.wrr_data), audit=self.audit)
                self.hosts[u].uplink = port
            else:
                port = SwitchPort(sim, u, v, link.capacity, link.delay,
                                  data_budget=cfg.buffer_packets,
                                  header_capacity=cfg.header_queue_packets,
                                  n_data=cfg.n_data_queues,
                                  wrr=(cfg.wrr_header, cfg.wrr_data), audit=self.audit,
                                  trim_policy=cfg.trim_policy)
            self.ports[(u, v)] = port
        for (u, v), port in self.ports.items():
            if topo.is_host(v):
                port.deliver = self.hosts[v].receive
                host = self.hosts[v]
                host.downlink_capacity = port.capacity
                host.pull_interval = cfg.symbol_wire_bytes * 8 * SEC // port.capacity
            else:
                port.deliver = self.switches[v].receive
        self._routes: dict[tuple[int, int], tuple] = {}

    def route_options(self, src: int, dst: int) -> tuple:
        key = (src, dst)
        opts = self._routes.get(key)
        if opts is None:
            paths = self.topo.ecmp_paths(src, dst)
            if self.config.path_policy == "pinned":
                paths = paths[:1]
            opts = tuple(
                tuple(self.ports[(p[i], p[i + 1])] for i in range(len(p) - 1)) for p in paths
            )
            self._routes[key] = opts
        return opts

    def route(self, src: int, dst: int) -> tuple:
        return spray(self.route_options(src, dst), self.rng)

    def tree_ports(self, tree: MulticastTree) -> dict[int, tuple]:
        return {
            u: tuple(self.ports[(u, v)] for v in kids) for u, kids in tree.children.items()
        }

    def host(self, h: int) -> Host:
        return self.hosts[h]

    def set_loss(self, drop: Callable[[Packet], bool] | None) -> None:
        """Make every port silently discard the packets ``drop`` selects."""
        for port in self.ports.values():
            port.loss = drop

    def port_counters(self) -> Counter:
        total: Counter = Counter()
        for port in self.ports.values():
            total.update(port.counters)
        return total
