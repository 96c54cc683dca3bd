"""SCDP endpoints: rateless senders and pull-clocked receivers.

One :class:`SenderSession` runs on every sending host of a session (one
for unicast and one-to-many, ``n`` for many-to-one). A single
:class:`ReceiverSession` runs on every receiving host.

Receiver bookkeeping is per sub-block: ``target`` (K, or K plus the
overhead once loss is seen), ``count`` (distinct symbols stored) and
``inflight`` (symbols requested but not yet seen as a symbol or a
header). A new pull goes to the lowest undelivered block whose
``target - count - inflight`` is positive, so at most one pull is issued
per arriving packet and the initial window stays in flight until the
tail. Lossless sessions therefore send exactly ``sum(K) - w`` pulls.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterator

from .codec import SourceBlock, SymbolInfo, decode_latency, split_blocks
from .codec.base import DECODE_FIXED_NS, DECODE_THROUGHPUT_BPS, MAX_BLOCK_SYMBOLS
from .engine import US
from .fabric import MTU, Host, Mode, Packet, PacketType, SessionOpts

KIB = 1024
PRIVATE_ESI_BASE = 1 << 24
MLFQ_THRESHOLDS = (10 * KIB, 100 * KIB, 1024 * KIB, 10240 * KIB)


def mlfq_priority(bytes_sent: int, thresholds=MLFQ_THRESHOLDS) -> int:
    """Number of thresholds strictly exceeded by ``bytes_sent``."""
    pri = 0
    for t in thresholds:
        if bytes_sent > t:
            pri += 1
    return pri


def partition_esis(index: int, n_senders: int, start: int = 0) -> Iterator[int]:
    """ESIs ``>= start`` congruent to ``index`` mod ``n_senders``, ascending."""
    if not 0 <= index < n_senders:
        raise ValueError("sender index out of range")
    esi = start + (index - start) % n_senders
    while True:
        yield esi
        esi += n_senders


@dataclass
class ScdpConfig:
    window: int = 12
    many_to_one_window: int = 6
    overhead: int = 2
    rto_ns: int = 200 * US
    release_factor: int = 2
    thresholds: tuple = MLFQ_THRESHOLDS
    mlfq: bool = True
    max_block: int = MAX_BLOCK_SYMBOLS
    symbol_size: int = MTU
    decode_fixed_ns: int = DECODE_FIXED_NS
    decode_throughput_bps: float = DECODE_THROUGHPUT_BPS
    max_backoff: int = 5


def session_layout(total_length: int, cfg: ScdpConfig, num_blocks: int | None = None):
    return split_blocks(total_length, cfg.symbol_size, cfg.max_block, num_blocks)


def source_blocks(data: bytes, layout) -> list[SourceBlock]:
    """Cut application bytes into zero-padded sub-blocks matching ``layout``."""
    T = layout.symbol_size
    blocks, off = [], 0
    for sbn, K in enumerate(layout.sizes()):
        chunk = data[off: off + K * T]
        blk = SourceBlock.from_bytes(sbn, chunk.ljust(K * T, b"\0"), T)
        blocks.append(blk)
        off += K * T
    return blocks


class SenderSession:
    """Sender state machine: initial push, gap-filling pull service, release.

    ``receivers`` lists the receiving hosts; one-to-many sessions also pass
    ``tree_ports`` (one port map per equal-cost tree) and multicast every
    gated symbol.
    """

    def __init__(self, host: Host, sid: int, receivers: list[int], opts: SessionOpts,
                 cfg: ScdpConfig, codec, *, index: int = 0, n_senders: int = 1,
                 window: int | None = None, blocks: list[SourceBlock] | None = None,
                 tree_ports: tuple | None = None, trace: list | None = None):
        self.host = host
        self.sim = host.sim
        self.sid = sid
        self.receivers = list(receivers)
        self.opts = opts
        self.cfg = cfg
        self.codec = codec
        self.index = index
        self.stride = n_senders
        self.window = cfg.window if window is None else window
        self.layout = split_blocks(opts.total_length, opts.symbol_size, cfg.max_block,
                                   opts.num_blocks)
        self.blocks = blocks
        self.tree_ports = tree_ports
        self.trace = trace
        self.next_esi: dict[int, int] = {}
        self.expected: dict[tuple[int, int], int] = {}
        self.bytes_sent = 0
        self.num_sent = 0
        self.ignored_pulls = 0
        self.to_be_garbage_collected = False
        self.released = False
        self.revived = 0
        self.closed = False
        self._release_timer = None
        # one-to-many gate: pulled SBNs per receiver still in the gate
        self.gated = self.tree_ports is not None
        self.credits: dict[int, deque] = {r: deque() for r in self.receivers}
        self.active: list[int] = list(self.receivers)
        self.leaving: set[int] = set()
        self.private: dict[tuple[int, int], int] = {}
        host.senders[sid] = self

    # -- emission ------------------------------------------------------

    def _priority(self) -> int:
        if not self.cfg.mlfq:
            return 0
        return mlfq_priority(self.bytes_sent, self.cfg.thresholds)

    def _take_esi(self, sbn: int) -> int:
        esi = self.next_esi.get(sbn)
        if esi is None:
            esi = self.index
        self.next_esi[sbn] = esi + self.stride
        return esi

    def _emit(self, sbn: int, pri: int, *, syn: bool = False, to: int | None = None) -> None:
        self._send_symbol(sbn, self._take_esi(sbn), pri, syn, to,
                          unicast=not self.gated or to is not None)

    def _send_symbol(self, sbn: int, esi: int, pri: int, syn: bool, to: int | None, *,
                     unicast: bool) -> None:
        payload = None
        if self.blocks is not None:
            payload = self.codec.encode_symbol(self.blocks[sbn], esi).payload
        dst = to if to is not None else self.receivers[0]
        pkt = Packet(PacketType.SMBL, self.sid, self.host.node, dst, pri=pri, sbn=sbn,
                     esi=esi, syn=syn, opts=self.opts, size=self.opts.symbol_size,
                     payload=payload, sender=self.index)
        self.bytes_sent += self.opts.symbol_size
        self.num_sent += 1
        if self.trace is not None:
            self.trace.append((self.sim._now, "send", sbn, esi, pri))
        if unicast:
            self.host.send(pkt, dst)
        else:
            self.host.multicast(pkt, self.tree_ports)

    def init_session(self) -> None:
        """Push the initial window, syn-flagged, at the highest priority."""
        for _ in range(self.window):
            self._emit(0, 0, syn=True)

    # -- pulls ---------------------------------------------------------

    def on_packet(self, pull: Packet) -> None:
        if self.closed or pull.typ != PacketType.PULL:
            return
        if self.released:
            self.released = False
            self.revived += 1
        if self.trace is not None:
            self.trace.append((self.sim._now, "pull", pull.sbn, -1, pull.seq))
        if self.gated:
            self._on_gated_pull(pull)
            return
        gap = self._gap(pull)
        if gap <= 0:
            return
        pri = 0 if pull.fin else self._priority()
        for _ in range(gap):
            self._emit(pull.sbn, pri, to=pull.src)
        if pull.fin:
            self._arm_release()

    def _gap(self, pull: Packet) -> int:
        key = (pull.src, pull.sbn)
        exp = self.expected.get(key, 1)
        if pull.seq < exp:
            self.ignored_pulls += 1
            return 0
        self.expected[key] = pull.seq + 1
        return pull.seq - exp + 1

    def _on_gated_pull(self, pull: Packet) -> None:
        r = pull.src
        if pull.fin and pull.seq == 0:
            # completion notice from a receiver that never needed a fin pull
            self._leave(r)
            return
        gap = self._gap(pull)
        if gap <= 0:
            return
        if r not in self.active:
            # late pull from a receiver outside the gate: private repair symbol
            pri = 0 if pull.fin else self._priority()
            for _ in range(gap):
                self._emit_private(pull.sbn, pri, r)
            if pull.fin:
                self._arm_release()
            return
        self.credits[r].extend([pull.sbn] * gap)
        if pull.fin:
            self.leaving.add(r)
        self._serve_gate()

    def _emit_private(self, sbn: int, pri: int, r: int) -> None:
        # ESIs above PRIVATE_ESI_BASE are never multicast, so a unicast reply
        # does not take a source symbol away from the rest of the group
        key = (r, sbn)
        n = self.private.get(key, 0)
        self.private[key] = n + 1
        esi = PRIVATE_ESI_BASE + (self.receivers.index(r) << 16) + n
        self._send_symbol(sbn, esi, pri, False, r, unicast=True)

    def _leave(self, r: int) -> None:
        if r in self.active:
            self.active.remove(r)
            self.credits[r].clear()
            self.leaving.discard(r)
            self._serve_gate()
        if not self.active:
            self._arm_release()

    def _serve_gate(self) -> None:
        active = self.active
        credits = self.credits
        while active and all(credits[r] for r in active):
            sbn = min(credits[r].popleft() for r in active)
            fin = bool(self.leaving)
            self._emit(sbn, 0 if fin else self._priority())
            for r in [r for r in self.leaving if not credits[r]]:
                self.leaving.discard(r)
                active.remove(r)
        if not active:
            self._arm_release()

    # -- garbage collection --------------------------------------------

    def _arm_release(self) -> None:
        self.to_be_garbage_collected = True
        if self._release_timer is not None:
            self._release_timer.cancel()
        delay = self.cfg.release_factor * self.cfg.rto_ns
        self._release_timer = self.sim.schedule(self.sim._now + delay, self._release)

    def _release(self) -> None:
        self._release_timer = None
        self.released = True

    def close(self) -> None:
        self.closed = True
        if self._release_timer is not None:
            self._release_timer.cancel()
            self._release_timer = None


@dataclass
class BlockState:
    K: int
    app_bytes: int
    decoder: object
    overhead: int = 0
    inflight: int = 0
    done: bool = False
    lossy: bool = False
    eliminated: bool = False
    used: int = 0

    @property
    def target(self) -> int:
        return self.K + self.overhead

    def need(self) -> int:
        return self.K + self.overhead - self.decoder.count - self.inflight


@dataclass
class ReceiverStats:
    symbols: int = 0
    headers: int = 0
    unnecessary: int = 0
    duplicates: int = 0
    pulls: int = 0
    timeouts: int = 0
    decode_attempts: int = 0
    decode_failures: int = 0
    stale: int = 0
    per_block_used: list = field(default_factory=list)


class ReceiverSession:
    """Receiver state machine for any transport mode.

    ``senders`` are the hosts this receiver may pull from; with more than
    one, a pull goes to the sender whose packet triggered it, so faster
    senders receive proportionally more pulls.
    """

    def __init__(self, host: Host, sid: int, senders: list[int], cfg: ScdpConfig, codec,
                 rng, *, window_total: int | None = None, mode: Mode = Mode.UNICAST,
                 on_complete: Callable[["ReceiverSession"], None] | None = None,
                 monitor=None, trace: list | None = None, keep_data: bool = False):
        self.host = host
        self.sim = host.sim
        self.sid = sid
        self.senders = list(senders)
        self.cfg = cfg
        self.codec = codec
        self.rng = rng
        self.mode = mode
        self.window_total = cfg.window if window_total is None else window_total
        self.on_complete = on_complete
        self.monitor = monitor
        self.trace = trace
        self.keep_data = keep_data
        self.established = False
        self.complete = False
        self.closed = False
        self.fin_sent = False
        self._pri = 0
        self.decode_invoked = False
        self.opts: SessionOpts | None = None
        self.blocks: list[BlockState] = []
        self.cursor = 0
        self.seq: dict[tuple[int, int], int] = {}
        self.stats = ReceiverStats()
        self.end_ns = 0
        self.data: bytes | None = None
        self._decoded: dict[int, object] = {}
        self._queued_pulls = 0
        self._last_activity = 0
        self._timer = None
        self._backoff = 0
        self._rr = 0
        host.receivers[sid] = self

    # -- establishment -------------------------------------------------

    def on_packet(self, pkt: Packet) -> None:
        if not self.established:
            if not pkt.syn or pkt.opts is None:
                self.stats.stale += 1
                return
            self._establish(pkt.opts)
        self._last_activity = self.sim._now
        self._backoff = 0
        self._pri = pkt.pri
        if pkt.typ == PacketType.SMBL:
            self.process_symbol(pkt)
        elif pkt.typ == PacketType.HDR:
            self.process_header(pkt)

    def _establish(self, opts: SessionOpts) -> None:
        self.opts = opts
        layout = split_blocks(opts.total_length, opts.symbol_size, self.cfg.max_block,
                              opts.num_blocks)
        self.layout = layout
        T = opts.symbol_size
        remaining = opts.total_length
        for sbn, K in enumerate(layout.sizes()):
            app = min(K * T, remaining)
            remaining -= app
            dec = self.codec.new_decoder(sbn, K, T, self.cfg.overhead)
            self.blocks.append(BlockState(K, app, dec))
        self.blocks[0].inflight = self.window_total
        self.established = True
        if self.trace is not None:
            self.trace.append((self.sim._now, "establish", 0, -1, -1))
        self._arm_timer(self.sim._now + self.cfg.rto_ns)

    # -- arrivals ------------------------------------------------------

    def _arrival(self, sbn: int) -> None:
        blk = self.blocks[sbn]
        if blk.inflight > 0:
            blk.inflight -= 1
            return
        # answered a pull for some other block (multicast min-SBN rule)
        for j in range(self.cursor, len(self.blocks)):
            b = self.blocks[j]
            if b.inflight > 0 and not b.done:
                b.inflight -= 1
                return

    def process_symbol(self, pkt: Packet) -> None:
        sbn = pkt.sbn
        self.stats.symbols += 1
        if self.trace is not None:
            self.trace.append((self.sim._now, "symbol", sbn, pkt.esi, -1))
        self._arrival(sbn)
        blk = self.blocks[sbn]
        if blk.done or self.complete:
            self.stats.unnecessary += 1
        elif blk.decoder.add_symbol(SymbolInfo(sbn, pkt.esi, pkt.payload, blk.K)):
            blk.used += 1
            if self.monitor is not None and blk.used <= blk.K:
                # each of the first K stored symbols carries 1/K of the block
                i, K, app = blk.used, blk.K, blk.app_bytes
                self.monitor.record(self.sid, self.sim._now, app * i // K - app * (i - 1) // K)
            self._check_block(sbn)
        else:
            self.stats.duplicates += 1
        self._maybe_pull(pkt.src)

    def process_header(self, pkt: Packet) -> None:
        sbn = pkt.sbn
        self.stats.headers += 1
        if self.trace is not None:
            self.trace.append((self.sim._now, "header", sbn, pkt.esi, -1))
        self._arrival(sbn)
        blk = self.blocks[sbn]
        if not blk.done:
            blk.lossy = True
            if blk.overhead < self.cfg.overhead:
                blk.overhead = self.cfg.overhead
            self._check_block(sbn)
        self._maybe_pull(pkt.src)

    def _check_block(self, sbn: int) -> None:
        blk = self.blocks[sbn]
        dec = blk.decoder
        if dec.has_all_source:
            self._deliver(sbn, dec.try_decode(self.rng))
            return
        if blk.overhead == 0 and dec.count >= blk.K:
            # K symbols but some are repair: decoding needs the overhead
            blk.overhead = self.cfg.overhead
        if blk.overhead > 0 and dec.count >= blk.target:
            self.stats.decode_attempts += 1
            res = dec.try_decode(self.rng)
            if res.success:
                self._deliver(sbn, res)
            else:
                self.stats.decode_failures += 1
                blk.overhead += 1
                if self.trace is not None:
                    self.trace.append((self.sim._now, "decode_fail", sbn, -1, -1))

    def _deliver(self, sbn: int, res) -> None:
        blk = self.blocks[sbn]
        blk.done = True
        blk.eliminated = res.eliminated
        now = self.sim._now
        ready = now
        if res.eliminated:
            self.decode_invoked = True
            ready += decode_latency(blk.K, self.opts.symbol_size, self.cfg.decode_fixed_ns,
                                    self.cfg.decode_throughput_bps)
        if self.keep_data:
            self._decoded[sbn] = res.data
        if ready > self.end_ns:
            self.end_ns = ready
        if self.trace is not None:
            self.trace.append((now, "deliver", sbn, -1, int(res.eliminated)))
        blocks = self.blocks
        while self.cursor < len(blocks) and blocks[self.cursor].done:
            self.cursor += 1
        if self.cursor == len(blocks):
            self._finish()

    def _finish(self) -> None:
        self.complete = True
        self.closed = True
        if self._timer is not None:
            self._timer.cancel()
            self._timer = None
        if self.keep_data:
            parts = [self._decoded[b].tobytes() for b in range(len(self.blocks))]
            self.data = b"".join(parts)[: self.opts.total_length]
        if self.mode == Mode.ONE_TO_MANY and not self.fin_sent:
            notice = Packet(PacketType.PULL, self.sid, self.host.node, self.senders[0],
                            seq=0, fin=True)
            self.host.net.audit.on_pull_sent(notice)
            self.host.send_control(notice)
        if self.on_complete is not None:
            if self.end_ns > self.sim._now:
                self.sim.schedule(self.end_ns, self.on_complete, self)
            else:
                self.on_complete(self)

    # -- pulls ---------------------------------------------------------

    def _next_block(self) -> int | None:
        blocks = self.blocks
        for j in range(self.cursor, len(blocks)):
            b = blocks[j]
            if not b.done and b.need() > 0:
                return j
        return None

    def _maybe_pull(self, sender: int) -> None:
        if self.complete:
            return
        sbn = self._next_block()
        if sbn is None:
            return
        if sender not in self.senders:
            sender = self.senders[0]
        self._issue_pull(sbn, sender)

    def _issue_pull(self, sbn: int, sender: int) -> None:
        blk = self.blocks[sbn]
        blk.inflight += 1
        fin = sbn == len(self.blocks) - 1 and blk.need() == 0
        key = (sender, sbn)
        seq = self.seq.get(key, 0) + 1
        self.seq[key] = seq
        pkt = Packet(PacketType.PULL, self.sid, self.host.node, sender, sbn=sbn, seq=seq,
                     fin=fin)
        self.stats.pulls += 1
        self._queued_pulls += 1
        if self.trace is not None:
            self.trace.append((self.sim._now, "pull", sbn, -1, seq))
        self.host.enqueue_pull(pkt, self)

    def on_pull_departed(self, pkt: Packet) -> None:
        # only a fin that left the host counts; a queued one dies with the session
        if pkt.fin:
            self.fin_sent = True
        self._queued_pulls -= 1
        self._last_activity = self.sim._now

    # -- loss timeout --------------------------------------------------

    def _arm_timer(self, at: int) -> None:
        self._timer = self.sim.schedule(at, self._on_timer)

    def _on_timer(self) -> None:
        self._timer = None
        if self.complete:
            return
        now = self.sim._now
        rto = self.cfg.rto_ns << self._backoff
        due = self._last_activity + rto
        if now < due or self._queued_pulls > 0:
            self._arm_timer(max(due, now + 1) if now < due else now + rto)
            return
        if self.host.outranked(self._pri, now - self.cfg.rto_ns):
            # starved by higher-priority traffic, not lost: a fresh pull
            # would only add a packet to the queue it is stuck in
            self._arm_timer(now + self.cfg.rto_ns)
            return
        # silence: presume one requested packet (or its pull) was lost
        self.stats.timeouts += 1
        if self.trace is not None:
            self.trace.append((now, "timeout", self.cursor, -1, -1))
        live = [b for b in self.blocks[self.cursor:] if not b.done]
        if self._next_block() is None:
            # tail: everything still missing is already requested, so the
            # silence means those requests are lost; ask for all of them again
            for b in live:
                b.inflight = 0
            while self._next_block() is not None:
                self._rr = (self._rr + 1) % len(self.senders)
                self._maybe_pull(self.senders[self._rr])
        else:
            for b in live:
                if b.inflight > 0:
                    b.inflight -= 1
                    break
            self._rr = (self._rr + 1) % len(self.senders)
            self._maybe_pull(self.senders[self._rr])
        self._backoff = min(self._backoff + 1, self.cfg.max_backoff)
        self._last_activity = now
        self._arm_timer(now + (self.cfg.rto_ns << self._backoff))

    def close(self) -> None:
        self.closed = True
        if self._timer is not None:
            self._timer.cancel()
            self._timer = None

    # -- accounting ----------------------------------------------------

    @property
    def total_symbols(self) -> int:
        return sum(b.K for b in self.blocks)

    @property
    def symbols_used(self) -> int:
        return sum(b.used for b in self.blocks)

    @property
    def overhead_symbols(self) -> int:
        return self.symbols_used - self.total_symbols
