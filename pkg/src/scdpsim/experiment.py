"""Session orchestration on top of a :class:`~scdpsim.fabric.Network`.

An :class:`Experiment` owns one simulator, one network and the protocol
configuration. Each ``open_*`` method schedules a transfer and returns its
session id; a :class:`SessionRecord` is appended to ``records`` when the
transfer completes. :meth:`Experiment.run` stops unfinished sessions at
the horizon, drains the fabric and runs the conservation audit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from .codec import ModelCodec
from .engine import INFINITY, US, Simulator, make_stream
from .fabric import FabricConfig, Mode, Network, SessionOpts
from .metrics import Audit, SessionRecord, ThroughputMonitor
from .ndp import NdpConfig, NdpReceiver, NdpSender, n_packets
from .scdp import ReceiverSession, ScdpConfig, SenderSession, session_layout, source_blocks
from .topology import FatTree

MODE_NAMES = {
    Mode.UNICAST: "unicast",
    Mode.ONE_TO_MANY: "one_to_many",
    Mode.MANY_TO_ONE: "many_to_one",
}


@dataclass
class Transfer:
    """Bookkeeping for one application-level transfer."""

    sid: int
    protocol: str
    mode: str
    size: int
    start: int
    tag: str = ""
    senders: list = field(default_factory=list)
    receivers: list = field(default_factory=list)
    pending: int = 0
    end: int = 0
    done: bool = False
    data: bytes | None = None
    on_done: Callable | None = None


class Experiment:
    def __init__(self, topo: FatTree, *, seed: int = 0, fabric: FabricConfig | None = None,
                 scdp: ScdpConfig | None = None, ndp: NdpConfig | None = None, codec=None,
                 host_rates: dict | None = None, monitor_bin_ns: int | None = None,
                 trace: bool = False):
        self.sim = Simulator(seed)
        self.topo = topo
        self.audit = Audit()
        self.net = Network(self.sim, topo, fabric, self.audit, host_rates)
        self.scdp_cfg = scdp or ScdpConfig()
        self.ndp_cfg = ndp or NdpConfig()
        self.codec = codec if codec is not None else ModelCodec()
        self.codec_rng = self.sim.rng("codec")
        self.monitor = ThroughputMonitor(monitor_bin_ns) if monitor_bin_ns else None
        self.trace: dict[int, list] | None = {} if trace else None
        self.transfers: dict[int, Transfer] = {}
        self.records: list[SessionRecord] = []
        self._next_sid = 1
        self._trees = 0
        self._subs: dict[int, list[int]] = {}

    # -- helpers -------------------------------------------------------

    def _new_transfer(self, protocol, mode, size, start, tag) -> Transfer:
        sid = self._next_sid
        self._next_sid += 1
        t = Transfer(sid, protocol, mode, size, start, tag)
        self.transfers[sid] = t
        if self.trace is not None:
            self.trace[sid] = []
        return t

    def _trace(self, sid):
        return None if self.trace is None else self.trace[sid]

    def _at(self, start: int, fn: Callable) -> None:
        self.sim.schedule(max(start, self.sim.now()), fn)

    def _part_done(self, t: Transfer, end: int) -> None:
        t.pending -= 1
        t.end = max(t.end, end)
        if t.pending == 0 and not t.done:
            t.done = True
            self.records.append(self._record(t))
            if t.on_done is not None:
                t.on_done(t)

    def _record(self, t: Transfer) -> SessionRecord:
        trimmed = sum(self.audit.trimmed.get(s, 0) for s in self.session_ids(t.sid))
        rec = SessionRecord(t.sid, t.protocol, t.mode, t.size, t.start, t.end,
                            trimmed=trimmed, tag=t.tag)
        for r in t.receivers:
            if isinstance(r, ReceiverSession):
                rec.overhead_symbols += r.overhead_symbols
                rec.unnecessary_symbols += r.stats.unnecessary
                rec.symbols_delivered += r.symbols_used
                rec.decode_invoked = rec.decode_invoked or r.decode_invoked
            else:
                rec.symbols_delivered += r.count
                rec.overhead_symbols += r.duplicates
        return rec

    # -- SCDP ----------------------------------------------------------

    def _opts(self, mode: Mode, size: int) -> SessionOpts:
        layout = session_layout(size, self.scdp_cfg)
        return SessionOpts(mode, size, layout.num_blocks, self.scdp_cfg.symbol_size)

    def _blocks(self, data: bytes | None, opts: SessionOpts):
        if data is None:
            return None
        return source_blocks(data, session_layout(opts.total_length, self.scdp_cfg,
                                                  opts.num_blocks))

    def _scdp_receiver(self, t: Transfer, host: int, senders, mode, window_total,
                       keep_data) -> ReceiverSession:
        def done(rx: ReceiverSession):
            if keep_data:
                t.data = rx.data
            self._part_done(t, rx.end_ns)

        rx = ReceiverSession(self.net.host(host), t.sid, senders, self.scdp_cfg, self.codec,
                             self.codec_rng, window_total=window_total, mode=mode,
                             on_complete=done, monitor=self.monitor,
                             trace=self._trace(t.sid), keep_data=keep_data)
        t.receivers.append(rx)
        t.pending += 1
        return rx

    def open_unicast(self, src: int, dst: int, size: int, start: int = 0, *, tag: str = "",
                     data: bytes | None = None, window: int | None = None) -> int:
        t = self._new_transfer("scdp", "unicast", size, start, tag)
        opts = self._opts(Mode.UNICAST, size)
        w = self.scdp_cfg.window if window is None else window

        def begin():
            self._scdp_receiver(t, dst, [src], Mode.UNICAST, w, data is not None)
            tx = SenderSession(self.net.host(src), t.sid, [dst], opts, self.scdp_cfg,
                               self.codec, window=w, blocks=self._blocks(data, opts),
                               trace=self._trace(t.sid))
            t.senders.append(tx)
            tx.init_session()

        self._at(start, begin)
        return t.sid

    def open_one_to_many(self, src: int, dsts: list[int], size: int, start: int = 0, *,
                         tag: str = "", data: bytes | None = None) -> int:
        t = self._new_transfer("scdp", "one_to_many", size, start, tag)
        opts = self._opts(Mode.ONE_TO_MANY, size)
        self._trees += 1
        # one tree per (aggregation, core) choice; packets are sprayed across them
        half = self.topo.k // 2
        variants = tuple(
            self.net.tree_ports(self.topo.build_multicast_tree(
                src, dsts, group_id=self._trees, agg_index=a, core_index=c))
            for a in range(half) for c in range(half))
        if self.net.config.path_policy == "pinned":
            variants = variants[:1]
        w = self.scdp_cfg.window

        def begin():
            for d in dsts:
                self._scdp_receiver(t, d, [src], Mode.ONE_TO_MANY, w, data is not None)
            tx = SenderSession(self.net.host(src), t.sid, list(dsts), opts, self.scdp_cfg,
                               self.codec, window=w, blocks=self._blocks(data, opts),
                               tree_ports=variants, trace=self._trace(t.sid))
            t.senders.append(tx)
            tx.init_session()

        self._at(start, begin)
        return t.sid

    def open_many_to_one(self, srcs: list[int], dst: int, size: int, start: int = 0, *,
                         tag: str = "", data: bytes | None = None) -> int:
        t = self._new_transfer("scdp", "many_to_one", size, start, tag)
        opts = self._opts(Mode.MANY_TO_ONE, size)
        wi = self.scdp_cfg.many_to_one_window
        n = len(srcs)

        def begin():
            self._scdp_receiver(t, dst, list(srcs), Mode.MANY_TO_ONE, wi * n,
                                data is not None)
            blocks = self._blocks(data, opts)
            for i, s in enumerate(srcs):
                tx = SenderSession(self.net.host(s), t.sid, [dst], opts, self.scdp_cfg,
                                   self.codec, index=i, n_senders=n, window=wi,
                                   blocks=blocks, trace=self._trace(t.sid))
                t.senders.append(tx)
            for tx in t.senders:
                tx.init_session()

        self._at(start, begin)
        return t.sid

    # -- NDP -----------------------------------------------------------

    def _ndp_pair(self, t: Transfer, src: int, dst: int, cfg: NdpConfig, *,
                  available: int | None = None, on_progress=None) -> NdpSender:
        npkts = n_packets(t.size, cfg.packet_size)
        trace = self._trace(t.sid)

        def done(rx: NdpReceiver):
            self._part_done(t, rx.end_ns)

        rx = NdpReceiver(self.net.host(dst), t.sid, src, npkts, cfg, on_complete=done,
                         on_progress=on_progress, monitor=self.monitor, app_bytes=t.size,
                         trace=trace)
        tx = NdpSender(self.net.host(src), t.sid, dst, npkts, cfg, available=available,
                       trace=trace)
        t.receivers.append(rx)
        t.senders.append(tx)
        t.pending += 1
        return tx

    def _ndp_cfg(self, plus: bool) -> NdpConfig:
        c = self.ndp_cfg
        return NdpConfig(c.window, plus, c.thresholds, c.rto_ns, c.packet_size, c.max_backoff)

    def open_ndp(self, src: int, dst: int, size: int, start: int = 0, *, plus: bool = False,
                 tag: str = "", mode: str = "unicast") -> int:
        proto = "ndp_plus" if plus else "ndp"
        t = self._new_transfer(proto, mode, size, start, tag)
        cfg = self._ndp_cfg(plus)

        def begin():
            tx = self._ndp_pair(t, src, dst, cfg)
            t.receivers[-1].start_timer()
            tx.init_session()

        self._at(start, begin)
        return t.sid

    def open_ndp_multi_unicast(self, src: int, dsts: list[int], size: int, start: int = 0, *,
                               plus: bool = False, tag: str = "") -> int:
        """One write replicated as independent flows from the client.

        All replica flows share one session id so the record covers the
        whole write; each flow runs on distinct hosts.
        """
        proto = "ndp_plus" if plus else "ndp"
        t = self._new_transfer(proto, "multi_unicast", size, start, tag)
        cfg = self._ndp_cfg(plus)

        def begin():
            txs = []
            for d in dsts:
                txs.append(self._ndp_pair_multi(t, src, d, cfg))
            for rx in t.receivers:
                rx.start_timer()
            for tx in txs:
                tx.init_session()

        self._at(start, begin)
        return t.sid

    def _ndp_pair_multi(self, t: Transfer, src: int, dst: int, cfg: NdpConfig) -> NdpSender:
        # a distinct sub-session id per replica flow keeps endpoint demux unique
        sub = self._new_sub(t)
        npkts = n_packets(t.size, cfg.packet_size)

        def done(rx):
            self._part_done(t, rx.end_ns)

        rx = NdpReceiver(self.net.host(dst), sub, src, npkts, cfg, on_complete=done,
                         monitor=self.monitor, app_bytes=t.size, trace=self._trace(t.sid))
        tx = NdpSender(self.net.host(src), sub, dst, npkts, cfg, trace=self._trace(t.sid))
        t.receivers.append(rx)
        t.senders.append(tx)
        t.pending += 1
        return tx

    def session_ids(self, sid: int) -> list[int]:
        """Wire-level session ids used by transfer ``sid``."""
        return [sid] + self._subs.get(sid, [])

    def _new_sub(self, t: Transfer) -> int:
        sid = self._next_sid
        self._next_sid += 1
        self._subs.setdefault(t.sid, []).append(sid)
        return sid

    def open_ndp_daisy_chain(self, src: int, chain: list[int], size: int, start: int = 0, *,
                             plus: bool = False, tag: str = "") -> int:
        """Client writes to the first replica, which forwards what it holds."""
        proto = "ndp_plus" if plus else "ndp"
        t = self._new_transfer(proto, "daisy_chain", size, start, tag)
        cfg = self._ndp_cfg(plus)
        npkts = n_packets(size, cfg.packet_size)

        def begin():
            hops = [src] + list(chain)
            senders: list[NdpSender] = []
            receivers: list[NdpReceiver] = []
            for i in range(len(chain)):
                sub = self._new_sub(t)
                a, b = hops[i], hops[i + 1]
                rx = NdpReceiver(self.net.host(b), sub, a, npkts, cfg, monitor=self.monitor,
                                 app_bytes=size, trace=self._trace(t.sid))
                tx = NdpSender(self.net.host(a), sub, b, npkts, cfg,
                               available=None if i == 0 else 0, trace=self._trace(t.sid))
                senders.append(tx)
                receivers.append(rx)
            for i, rx in enumerate(receivers):
                if i + 1 < len(senders):
                    rx.on_progress = senders[i + 1].make_available
            last = receivers[-1]
            last.on_complete = lambda rx: self._part_done(t, rx.end_ns)
            t.pending += 1
            t.senders.extend(senders)
            t.receivers.extend(receivers)
            for rx in receivers:
                rx.start_timer()
            for tx in senders:
                tx.init_session()

        self._at(start, begin)
        return t.sid

    def open_ndp_read_ahead(self, srcs: list[int], dst: int, size: int, start: int = 0, *,
                            plus: bool = False, tag: str = "") -> int:
        """Read a block as ``len(srcs)`` equal parts fetched in parallel."""
        proto = "ndp_plus" if plus else "ndp"
        t = self._new_transfer(proto, "read_ahead", size, start, tag)
        cfg = self._ndp_cfg(plus)
        n = len(srcs)
        part = -(-size // n)

        def begin():
            txs = []
            for i, s in enumerate(srcs):
                sub = self._new_sub(t)
                nbytes = min(part, size - i * part)
                npkts = n_packets(nbytes, cfg.packet_size)
                rx = NdpReceiver(self.net.host(dst), sub, s, npkts, cfg,
                                 on_complete=lambda rx: self._part_done(t, rx.end_ns),
                                 monitor=self.monitor, app_bytes=nbytes,
                                 trace=self._trace(t.sid))
                tx = NdpSender(self.net.host(s), sub, dst, npkts, cfg,
                               trace=self._trace(t.sid))
                t.receivers.append(rx)
                t.senders.append(tx)
                t.pending += 1
                rx.start_timer()
                txs.append(tx)
            for tx in txs:
                tx.init_session()

        self._at(start, begin)
        return t.sid

    def stop_at(self, sid: int, when: int) -> None:
        """Close a transfer's endpoints at ``when`` (used for long-running flows)."""
        self.sim.schedule(when, self.stop, sid)

    def stop(self, sid: int) -> None:
        t = self.transfers[sid]
        for ep in t.senders + t.receivers:
            ep.close()

    # -- running -------------------------------------------------------

    def run(self, horizon: float = INFINITY, *, audit: bool = True) -> list[SessionRecord]:
        self.sim.run_until(horizon)
        for t in self.transfers.values():
            self.stop(t.sid)
        self.sim.run_until(INFINITY)
        if audit:
            self.audit_check()
        return self.records

    def audit_check(self) -> None:
        self.audit.check()

    def finished(self, tag: str | None = None) -> list[SessionRecord]:
        return [r for r in self.records if tag is None or r.tag == tag]

    def unfinished(self) -> list[Transfer]:
        return [t for t in self.transfers.values() if not t.done]


@dataclass
class RunResult:
    protocol: str
    seed: int
    records: list[SessionRecord]
    background: list[SessionRecord]
    experiment: Experiment
    unfinished: int = 0
    sids: list[int] = field(default_factory=list)
    tags: list[str] = field(default_factory=list)
    measure_window: tuple | None = None

    def tagged(self, tag: str) -> list[int]:
        return [sid for sid, t in zip(self.sids, self.tags) if t == tag]

    def last_activity(self, tag: str) -> int:
        return self._monitor().last_activity(self.tagged(tag))

    def _monitor(self):
        if self.experiment.monitor is None:
            raise ValueError("run without a throughput monitor")
        return self.experiment.monitor

    def rate_bps(self, tag: str, start: int, end: int) -> float:
        """Aggregate goodput of the sessions tagged ``tag`` over ``[start, end)``."""
        return self._monitor().rate_bps(self.tagged(tag), start, end)

    def group_rates(self) -> dict[str, float]:
        """Goodput of every tagged session group over the shared measurement window.

        Without a planned window, the window runs from zero to the earliest
        point at which some group went quiet, so every group is still active
        throughout.
        """
        groups = sorted({t for t in self.tags if t})
        if not groups:
            return {}
        if self.measure_window is not None:
            start, end = self.measure_window
        else:
            start, end = 0, min(self.last_activity(g) for g in groups)
        return {g: self.rate_bps(g, start, end) for g in groups}


def run_scenario(scenario, protocol: str, seed: int = 0, *, fabric: FabricConfig | None = None,
                 scdp: ScdpConfig | None = None, ndp: NdpConfig | None = None, codec=None,
                 monitor_bin_ns: int | None = None, trace: bool = False) -> RunResult:
    """Run a built scenario under one protocol.

    Long-running sessions stop at their planned time. Once every measured
    session has finished (or the horizon passes) all remaining background
    traffic is stopped, the fabric drains and the audit runs.
    """
    from dataclasses import replace

    if protocol not in ("scdp", "ndp", "ndp_plus"):
        raise ValueError(f"unknown protocol {protocol!r}")
    fabric = replace(fabric or FabricConfig(), path_policy=scenario.path_policy)
    if monitor_bin_ns is None and (scenario.groups or scenario.measure_window):
        monitor_bin_ns = 100 * US
    ex = Experiment(scenario.topo, seed=seed, fabric=fabric, scdp=scdp, ndp=ndp, codec=codec,
                    host_rates=scenario.host_rates, monitor_bin_ns=monitor_bin_ns, trace=trace)
    plus = protocol == "ndp_plus"
    spec = scenario.spec
    # a payload-carrying codec needs real bytes to encode
    payload_rng = make_stream(seed, "payload") if ex.codec.name == "reference" else None

    def data_for(p):
        return payload_rng.randbytes(p.size) if payload_rng is not None else None

    def open_plan(p) -> int:
        if p.kind == "unicast":
            if protocol == "scdp":
                return ex.open_unicast(p.src, p.dst, p.size, p.start, tag=p.tag,
                                       data=data_for(p))
            return ex.open_ndp(p.src, p.dst, p.size, p.start, plus=plus, tag=p.tag)
        if p.kind == "write":
            if protocol == "scdp":
                return ex.open_one_to_many(p.src, list(p.hosts), p.size, p.start, tag=p.tag,
                                           data=data_for(p))
            if spec.write_mode == "multi_unicast":
                return ex.open_ndp_multi_unicast(p.src, list(p.hosts), p.size, p.start,
                                                 plus=plus, tag=p.tag)
            return ex.open_ndp_daisy_chain(p.src, list(p.hosts), p.size, p.start, plus=plus,
                                           tag=p.tag)
        if p.kind == "read":
            if protocol == "scdp":
                return ex.open_many_to_one(list(p.hosts), p.src, p.size, p.start, tag=p.tag,
                                           data=data_for(p))
            if spec.read_ahead:
                return ex.open_ndp_read_ahead(list(p.hosts), p.src, p.size, p.start, plus=plus,
                                              tag=p.tag)
            return ex.open_ndp(p.dst, p.src, p.size, p.start, plus=plus, tag=p.tag,
                               mode="single_replica")
        raise ValueError(f"unknown session kind {p.kind!r}")

    measured = []
    for p in scenario.sessions:
        sid = open_plan(p)
        measured.append(sid)
        if p.stop is not None:
            ex.stop_at(sid, p.stop)
    background = [open_plan(p) for p in scenario.background]
    bg_set = set(background)
    left = {"n": sum(1 for p in scenario.sessions if p.stop is None)}

    def finished(_t):
        left["n"] -= 1
        if left["n"] == 0:
            for sid in background:
                ex.stop(sid)

    for sid, p in zip(measured, scenario.sessions):
        if p.stop is None:
            ex.transfers[sid].on_done = finished
    if left["n"] == 0 and background:
        horizon = max((p.stop for p in scenario.sessions if p.stop is not None), default=0)
        for sid in background:
            ex.stop_at(sid, horizon)
    ex.run(spec.horizon_ns)
    records = [r for r in ex.records if r.session_id not in bg_set]
    bg = [r for r in ex.records if r.session_id in bg_set]
    unfinished = sum(1 for sid in measured if not ex.transfers[sid].done)
    return RunResult(protocol, seed, records, bg, ex, unfinished, measured,
                     [p.tag for p in scenario.sessions], scenario.measure_window)
