"""NDP baseline endpoints (and NDP+ with MLFQ tagging).

Same pull pacing as SCDP, but data is not coded: a trimmed packet must be
retransmitted with its original sequence number. A header arriving at the
receiver triggers a pull that names the missing sequence number; the
sender serves such retransmissions before new data.

A sender may be fed by an upstream receiver (daisy-chained replication):
it then only sends sequence numbers that are already available locally.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable

from .engine import US
from .fabric import MTU, Host, Packet, PacketType
from .scdp import MLFQ_THRESHOLDS, mlfq_priority


@dataclass
class NdpConfig:
    window: int = 12
    mlfq: bool = False  # True for NDP+
    thresholds: tuple = MLFQ_THRESHOLDS
    rto_ns: int = 200 * US
    packet_size: int = MTU
    max_backoff: int = 5


def n_packets(size_bytes: int, packet_size: int = MTU) -> int:
    return max(1, -(-size_bytes // packet_size))


class NdpSender:
    def __init__(self, host: Host, sid: int, dst: int, npkts: int, cfg: NdpConfig, *,
                 available: int | None = None, trace: list | None = None):
        self.host = host
        self.sim = host.sim
        self.sid = sid
        self.dst = dst
        self.npkts = npkts
        self.cfg = cfg
        # packets [0, available) can be sent now; a daisy-chained hop grows it
        self.available = npkts if available is None else available
        self.trace = trace
        self.next_seq = 0
        self.retx: deque[int] = deque()
        self.credit = 0
        self.expected = 1
        self.bytes_sent = 0
        self.num_sent = 0
        self.retransmissions = 0
        self.ignored_pulls = 0
        self.closed = False
        host.senders[sid] = self

    def _priority(self) -> int:
        if not self.cfg.mlfq:
            return 0
        return mlfq_priority(self.bytes_sent, self.cfg.thresholds)

    def _send(self, seq: int, syn: bool, pri: int) -> None:
        pkt = Packet(PacketType.SMBL, self.sid, self.host.node, self.dst, pri=pri, esi=seq,
                     syn=syn, size=self.cfg.packet_size, proto="ndp")
        self.bytes_sent += self.cfg.packet_size
        self.num_sent += 1
        if self.trace is not None:
            self.trace.append((self.sim._now, "send", 0, seq, pri))
        self.host.send(pkt, self.dst)

    def _pump(self, syn: bool = False) -> None:
        while self.credit > 0:
            if self.retx and self.retx[0] < self.available:
                seq = self.retx.popleft()
                self.retransmissions += 1
            elif self.next_seq < min(self.available, self.npkts):
                seq = self.next_seq
                self.next_seq += 1
            else:
                return
            self.credit -= 1
            self._send(seq, syn, 0 if syn else self._priority())

    def init_session(self) -> None:
        self.credit = min(self.cfg.window, self.npkts)
        self._pump(syn=True)

    def make_available(self, upto: int) -> None:
        if upto > self.available:
            self.available = upto
            self._pump(syn=self.num_sent < self.cfg.window)

    def on_packet(self, pull: Packet) -> None:
        if self.closed or pull.typ != PacketType.PULL:
            return
        if pull.seq < self.expected:
            self.ignored_pulls += 1
            return
        gap = pull.seq - self.expected + 1
        self.expected = pull.seq + 1
        if pull.nack >= 0:
            self.retx.append(pull.nack)
        self.credit += gap
        self._pump()

    def close(self) -> None:
        self.closed = True


class NdpReceiver:
    def __init__(self, host: Host, sid: int, src: int, npkts: int, cfg: NdpConfig, *,
                 on_complete: Callable[["NdpReceiver"], None] | None = None,
                 on_progress: Callable[[int], None] | None = None,
                 monitor=None, app_bytes: int | None = None, trace: list | None = None):
        self.host = host
        self.sim = host.sim
        self.sid = sid
        self.src = src
        self.npkts = npkts
        self.cfg = cfg
        self.on_complete = on_complete
        self.on_progress = on_progress
        self.monitor = monitor
        self.app_bytes = npkts * cfg.packet_size if app_bytes is None else app_bytes
        self.trace = trace
        self.got = bytearray(npkts)
        self.count = 0
        self.prefix = 0
        self.inflight = min(cfg.window, npkts)
        self.seq = 0
        self.pulls = 0
        self.headers = 0
        self.duplicates = 0
        self.timeouts = 0
        self.complete = False
        self.closed = False
        self.end_ns = 0
        self._queued_pulls = 0
        self._last_activity = host.sim._now
        self._backoff = 0
        self._pri = 0
        self._timer = None
        host.receivers[sid] = self

    def start_timer(self) -> None:
        self._last_activity = self.sim._now
        self._timer = self.sim.schedule(self.sim._now + self.cfg.rto_ns, self._on_timer)

    def on_packet(self, pkt: Packet) -> None:
        self._last_activity = self.sim._now
        self._backoff = 0
        self._pri = pkt.pri
        if self.inflight > 0:
            self.inflight -= 1
        seq = pkt.esi
        if pkt.typ == PacketType.SMBL:
            if self.trace is not None:
                self.trace.append((self.sim._now, "data", 0, seq, -1))
            if self.got[seq]:
                self.duplicates += 1
            else:
                self.got[seq] = 1
                self.count += 1
                if self.monitor is not None:
                    self.monitor.record(self.sid, self.sim._now,
                                        min(self.cfg.packet_size,
                                            self.app_bytes - seq * self.cfg.packet_size))
                if seq == self.prefix:
                    got = self.got
                    p = self.prefix
                    while p < self.npkts and got[p]:
                        p += 1
                    self.prefix = p
                    if self.on_progress is not None:
                        self.on_progress(p)
                if self.count == self.npkts:
                    self._finish()
                    return
            self._maybe_pull(-1)
        elif pkt.typ == PacketType.HDR:
            self.headers += 1
            if self.trace is not None:
                self.trace.append((self.sim._now, "header", 0, seq, -1))
            self._maybe_pull(-1 if self.got[seq] else seq)

    def _need(self) -> int:
        return self.npkts - self.count - self.inflight

    def _maybe_pull(self, nack: int) -> None:
        if self.complete or self._need() <= 0:
            return
        self._pull(nack)

    def _pull(self, nack: int) -> None:
        self.inflight += 1
        self.seq += 1
        self.pulls += 1
        self._queued_pulls += 1
        pkt = Packet(PacketType.PULL, self.sid, self.host.node, self.src, seq=self.seq,
                     fin=self._need() == 0, nack=nack, proto="ndp")
        self.host.enqueue_pull(pkt, self)

    def on_pull_departed(self, pkt: Packet) -> None:
        self._queued_pulls -= 1
        self._last_activity = self.sim._now

    def _on_timer(self) -> None:
        self._timer = None
        if self.complete:
            return
        now = self.sim._now
        due = self._last_activity + (self.cfg.rto_ns << self._backoff)
        if now < due:
            self._timer = self.sim.schedule(due, self._on_timer)
            return
        if self._queued_pulls > 0 or self.host.outranked(self._pri, now - self.cfg.rto_ns):
            self._timer = self.sim.schedule(now + self.cfg.rto_ns, self._on_timer)
            return
        self.timeouts += 1
        if self.inflight > 0:
            self.inflight -= 1
        missing = self.got.find(0, self.prefix)
        self._maybe_pull(missing if missing >= 0 else -1)
        self._backoff = min(self._backoff + 1, self.cfg.max_backoff)
        self._last_activity = now
        self._timer = self.sim.schedule(now + (self.cfg.rto_ns << self._backoff),
                                        self._on_timer)

    def _finish(self) -> None:
        self.complete = True
        self.closed = True
        self.end_ns = self.sim._now
        if self._timer is not None:
            self._timer.cancel()
            self._timer = None
        if self.on_complete is not None:
            self.on_complete(self)

    def close(self) -> None:
        self.closed = True
        if self._timer is not None:
            self._timer.cancel()
            self._timer = None
