from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..engine import SEC, US

MAX_BLOCK_SYMBOLS = 100
DECODE_THROUGHPUT_BPS = 1.3e9
DECODE_FIXED_NS = 10 * US


class DecodeError(ValueError):
    pass


@dataclass
class SourceBlock:
    sbn: int
    K: int
    T: int
    data: np.ndarray  # (K, T) uint8

    @classmethod
    def from_bytes(cls, sbn: int, payload: bytes, T: int) -> "SourceBlock":
        K = max(1, math.ceil(len(payload) / T))
        buf = np.zeros(K * T, dtype=np.uint8)
        buf[: len(payload)] = np.frombuffer(payload, dtype=np.uint8)
        return cls(sbn, K, T, buf.reshape(K, T))

    def fragment(self, i: int) -> np.ndarray:
        return self.data[i]

    def to_bytes(self, length: int | None = None) -> bytes:
        raw = self.data.tobytes()
        return raw if length is None else raw[:length]


@dataclass
class SymbolInfo:
    sbn: int
    esi: int
    payload: np.ndarray | None = None
    K: int | None = None

    def is_source(self, K: int) -> bool:
        return self.esi < K


@dataclass
class DecodeResult:
    success: bool
    data: np.ndarray | None = None
    eliminated: bool = False  # False when the source symbols were used verbatim


@dataclass(frozen=True)
class BlockLayout:
    """How a transfer of ``F`` bytes splits into ``Z`` sub-blocks of ``K`` symbols."""

    total_length: int
    symbol_size: int
    num_blocks: int
    symbols: int  # total source symbols N
    K: int  # symbols per block except possibly the last
    last: int

    def size(self, sbn: int) -> int:
        return self.last if sbn == self.num_blocks - 1 else self.K

    def sizes(self) -> list[int]:
        return [self.size(b) for b in range(self.num_blocks)]


def split_blocks(total_length: int, symbol_size: int,
                 max_block: int = MAX_BLOCK_SYMBOLS, num_blocks: int | None = None) -> BlockLayout:
    """Derive the sub-block layout from the session options (F, Z, T).

    ``K = ceil(F / (Z * T))`` for every sub-block but the last, which takes
    the remaining symbols.
    """
    if total_length <= 0 or symbol_size <= 0:
        raise ValueError("length and symbol size must be positive")
    n = math.ceil(total_length / symbol_size)
    z = num_blocks if num_blocks is not None else math.ceil(n / max_block)
    k = math.ceil(total_length / (z * symbol_size))
    last = n - (z - 1) * k
    if last < 1:
        # remainder rule underflows for very large Z; fall back to whole blocks
        k = max_block
        z = math.ceil(n / k)
        last = n - (z - 1) * k
    return BlockLayout(total_length, symbol_size, z, n, k, last)


def decode_latency(K: int, T: int, fixed_ns: int = DECODE_FIXED_NS,
                   throughput_bps: float = DECODE_THROUGHPUT_BPS) -> int:
    """Worst-case decoding time of a K-symbol block, linear in K."""
    if K < 1:
        raise ValueError("K must be >= 1")
    return int(fixed_ns + round(K * T * 8 * SEC / throughput_bps))
