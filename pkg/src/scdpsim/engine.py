"""Discrete-event simulation core.

Virtual time is an integer count of nanoseconds. Events with equal fire
times are dispatched in insertion order.
"""

from __future__ import annotations

import hashlib
import heapq
import random
from typing import Any, Callable

NS = 1
US = 1_000
MS = 1_000_000
SEC = 1_000_000_000

INFINITY = float("inf")

# Named stochastic subsystems. Each gets an independent stream so that
# switching one subsystem on or off never perturbs another's draws.
STREAMS = ("arrivals", "sizes", "placement", "spraying", "codec", "background", "loss")


class SchedulingError(RuntimeError):
    """Raised when an event is scheduled in the past."""


class EventHandle:
    """Cancellable reference to a queued event (lazy tombstone)."""

    __slots__ = ("fire_at", "seq", "action", "args", "cancelled")

    def __init__(self, fire_at: int, seq: int, action: Callable, args: tuple):
        self.fire_at = fire_at
        self.seq = seq
        self.action = action
        self.args = args
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True

    def _fire(self) -> None:
        if not self.cancelled:
            self.action(*self.args)


class Simulator:
    """Event queue keyed on ``(fire_at, seq)`` with a virtual clock."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self._now = 0
        self._seq = 0
        self._queue: list[tuple[int, int, Callable, Any]] = []
        self._streams: dict[str, random.Random] = {}
        self.dispatched = 0

    def now(self) -> int:
        return self._now

    def schedule(self, fire_at: int, action: Callable, *args: Any) -> EventHandle:
        """Queue ``action(*args)`` at absolute time ``fire_at``; returns a handle."""
        if fire_at < self._now:
            raise SchedulingError(f"event at {fire_at} ns is before now ({self._now} ns)")
        handle = EventHandle(fire_at, self._seq, action, args)
        heapq.heappush(self._queue, (fire_at, self._seq, handle._fire, None))
        self._seq += 1
        return handle

    def schedule_in(self, delay: int, action: Callable, *args: Any) -> EventHandle:
        return self.schedule(self._now + delay, action, *args)

    def post(self, fire_at: int, action: Callable, arg: Any = None) -> None:
        # Non-cancellable fast path used by the packet pipeline; one argument.
        heapq.heappush(self._queue, (fire_at, self._seq, action, arg))
        self._seq += 1

    def pending(self) -> int:
        return len(self._queue)

    def run_until(self, end: float = INFINITY) -> int:
        """Dispatch every event with ``fire_at <= end``; returns the count."""
        queue = self._queue
        pop = heapq.heappop
        count = 0
        while queue and queue[0][0] <= end:
            fire_at, _, action, arg = pop(queue)
            self._now = fire_at
            if arg is None:
                action()
            else:
                action(arg)
            count += 1
        self.dispatched += count
        return count

    def rng(self, stream: str | int) -> random.Random:
        """Return the named RNG stream, creating it on first use."""
        key = str(stream)
        gen = self._streams.get(key)
        if gen is None:
            gen = make_stream(self.seed, key)
            self._streams[key] = gen
        return gen


def derive_seed(seed: int, stream: str | int) -> int:
    digest = hashlib.sha256(f"{int(seed)}/{stream}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def make_stream(seed: int, stream: str | int) -> random.Random:
    """Platform-stable generator for a ``(seed, stream_id)`` pair."""
    return random.Random(derive_seed(seed, stream))
