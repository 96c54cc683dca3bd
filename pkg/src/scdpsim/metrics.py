"""Per-session records, conservation audit and summary statistics."""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import stats

CSV_COLUMNS = (
    "session_id", "protocol", "mode", "size_bytes", "start_ns", "end_ns", "fct_ns",
    "goodput_bps", "trimmed", "overhead_symbols", "decode_invoked", "unnecessary_symbols",
)


class AuditError(RuntimeError):
    pass


class Audit:
    """Counts every symbol-packet instance from emission to its fate.

    An instance is created by a sender or by replication at a multicast
    branch point. It ends as a delivered symbol, a delivered (trimmed)
    header, or a drop.
    """

    def __init__(self):
        self.sent = defaultdict(int)
        self.delivered = defaultdict(int)
        self.headers = defaultdict(int)
        self.dropped = defaultdict(int)
        self.trimmed = defaultdict(int)
        self.pulls_sent = defaultdict(int)
        self.pulls_delivered = defaultdict(int)
        self.pulls_dropped = defaultdict(int)

    def on_send(self, pkt) -> None:
        self.sent[pkt.sid] += 1

    def on_replicate(self, pkt, extra: int) -> None:
        if pkt.typ != 2:
            self.sent[pkt.sid] += extra

    def on_trim(self, pkt) -> None:
        self.trimmed[pkt.sid] += 1

    def on_drop(self, pkt) -> None:
        if pkt.typ == 2:
            self.pulls_dropped[pkt.sid] += 1
        else:
            self.dropped[pkt.sid] += 1

    def on_deliver(self, pkt) -> None:
        if pkt.typ == 0:
            self.delivered[pkt.sid] += 1
        else:
            self.headers[pkt.sid] += 1

    def on_pull_sent(self, pkt) -> None:
        self.pulls_sent[pkt.sid] += 1

    def on_pull_delivered(self, pkt) -> None:
        self.pulls_delivered[pkt.sid] += 1

    def imbalance(self) -> dict[int, int]:
        """Sessions whose instance count does not reconcile (should be empty once drained)."""
        out = {}
        for sid, sent in self.sent.items():
            diff = sent - self.delivered[sid] - self.headers[sid] - self.dropped[sid]
            if diff:
                out[sid] = diff
        return out

    def check(self) -> None:
        bad = self.imbalance()
        if bad:
            sample = dict(list(bad.items())[:5])
            raise AuditError(f"conservation audit failed for {len(bad)} sessions: {sample}")
        for sid, sent in self.pulls_sent.items():
            if sent != self.pulls_delivered[sid] + self.pulls_dropped[sid]:
                raise AuditError(f"pull audit failed for session {sid}")


class ThroughputMonitor:
    """Useful application bytes received per session, in fixed time bins."""

    def __init__(self, bin_ns: int):
        self.bin_ns = bin_ns
        self.bins: dict[int, dict[int, int]] = defaultdict(lambda: defaultdict(int))

    def record(self, sid: int, now: int, nbytes: int) -> None:
        self.bins[sid][now // self.bin_ns] += nbytes

    def bytes_between(self, sid: int, start: int, end: int) -> int:
        lo, hi = start // self.bin_ns, end // self.bin_ns
        return sum(v for b, v in self.bins.get(sid, {}).items() if lo <= b < hi)

    def last_activity(self, sids: Iterable[int]) -> int:
        """End of the last bin in which any of ``sids`` received data."""
        last = [max(self.bins[s]) for s in sids if self.bins.get(s)]
        return (max(last) + 1) * self.bin_ns if last else 0

    def rate_bps(self, sids: Iterable[int], start: int, end: int) -> float:
        lo, hi = start // self.bin_ns, end // self.bin_ns
        span = (hi - lo) * self.bin_ns
        total = sum(self.bytes_between(s, start, end) for s in sids)
        return total * 8e9 / span if span > 0 else 0.0


@dataclass
class SessionRecord:
    session_id: int
    protocol: str
    mode: str
    size_bytes: int
    start_ns: int
    end_ns: int
    trimmed: int = 0
    overhead_symbols: int = 0
    decode_invoked: bool = False
    unnecessary_symbols: int = 0
    symbols_delivered: int = 0
    tag: str = ""

    @property
    def fct_ns(self) -> int:
        return self.end_ns - self.start_ns

    @property
    def goodput_bps(self) -> float:
        fct = self.fct_ns
        return self.size_bytes * 8e9 / fct if fct > 0 else 0.0

    def row(self) -> dict:
        return {
            "session_id": self.session_id,
            "protocol": self.protocol,
            "mode": self.mode,
            "size_bytes": self.size_bytes,
            "start_ns": self.start_ns,
            "end_ns": self.end_ns,
            "fct_ns": self.fct_ns,
            "goodput_bps": f"{self.goodput_bps:.3f}",
            "trimmed": self.trimmed,
            "overhead_symbols": self.overhead_symbols,
            "decode_invoked": int(self.decode_invoked),
            "unnecessary_symbols": self.unnecessary_symbols,
        }


@dataclass
class FctStats:
    count: int
    mean: float
    p99: float
    cdf: list[tuple[float, float]]


def nearest_rank(values: Sequence[float], pct: float) -> float:
    """Nearest-rank percentile (no interpolation)."""
    if not values:
        raise ValueError("empty sample")
    ordered = sorted(values)
    rank = max(1, math.ceil(pct / 100.0 * len(ordered)))
    return ordered[rank - 1]


def size_filter(lo: int = 0, hi: float = math.inf) -> Callable[[SessionRecord], bool]:
    """Select records with ``lo < size <= hi``."""
    return lambda r: lo < r.size_bytes <= hi


def fct_stats(records: Iterable[SessionRecord], select: Callable | None = None) -> FctStats:
    chosen = [r.fct_ns for r in records if select is None or select(r)]
    if not chosen:
        raise ValueError("no records match the filter")
    ordered = sorted(chosen)
    n = len(ordered)
    cdf = [(float(v), (i + 1) / n) for i, v in enumerate(ordered)]
    return FctStats(n, float(np.mean(ordered)), float(nearest_rank(ordered, 99)), cdf)


def decode_fraction(records: Iterable[SessionRecord], select: Callable | None = None) -> float:
    chosen = [r for r in records if select is None or select(r)]
    if not chosen:
        return 0.0
    return sum(1 for r in chosen if r.decode_invoked) / len(chosen)


def ranked_goodput(records: Iterable[SessionRecord]) -> list[float]:
    """Goodputs sorted high to low (the ranked-flow series)."""
    return sorted((r.goodput_bps for r in records), reverse=True)


def jain_index(xs: Sequence[float]) -> float:
    xs = np.asarray(xs, dtype=float)
    denom = len(xs) * float(np.sum(xs * xs))
    return float(np.sum(xs)) ** 2 / denom if denom else 0.0


def mean_ci95(values: Sequence[float]) -> tuple[float, float]:
    """Sample mean and half-width of the 95% t confidence interval."""
    arr = np.asarray(values, dtype=float)
    if len(arr) == 0:
        return math.nan, math.nan
    mean = float(arr.mean())
    if len(arr) < 2:
        return mean, 0.0
    half = float(stats.t.ppf(0.975, len(arr) - 1) * arr.std(ddof=1) / math.sqrt(len(arr)))
    return mean, half


def export_csv(records: Iterable[SessionRecord], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for rec in sorted(records, key=lambda r: r.session_id):
            writer.writerow(rec.row())
    return path


def export_ranked(records: Iterable[SessionRecord], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank", "goodput_bps"])
        for i, g in enumerate(ranked_goodput(records), 1):
            w.writerow([i, f"{g:.3f}"])
    return path


def read_csv(path: str | Path) -> list[dict]:
    with Path(path).open() as fh:
        return list(csv.DictReader(fh))


def aggregate(records: Sequence[SessionRecord]) -> dict[str, float]:
    """Scalar metrics for one run; the CLI averages these across seeds."""
    if not records:
        return {"sessions": 0}
    fct = [r.fct_ns for r in records]
    good = [r.goodput_bps for r in records]
    return {
        "sessions": len(records),
        "mean_fct_ns": float(np.mean(fct)),
        "p99_fct_ns": float(nearest_rank(fct, 99)),
        "mean_goodput_bps": float(np.mean(good)),
        "median_goodput_bps": float(np.median(good)),
        "decode_fraction": decode_fraction(records),
        "mean_trimmed": float(np.mean([r.trimmed for r in records])),
        "mean_overhead_symbols": float(np.mean([r.overhead_symbols for r in records])),
        "mean_unnecessary_symbols": float(np.mean([r.unnecessary_symbols for r in records])),
    }


def record_fields() -> list[str]:
    return [f.name for f in fields(SessionRecord)]


def as_dict(rec: SessionRecord) -> dict:
    return asdict(rec)
