"""Systematic random-linear code over GF(256).

Encoding symbol ``esi < K`` is source fragment ``esi`` verbatim. Repair
symbols are GF(256) combinations of the K fragments whose coefficients
depend only on ``(SBN, ESI, K)``, so any host holding the block emits the
same repair symbol for the same ESI.
"""

from __future__ import annotations

import hashlib
import random
from functools import lru_cache

import numpy as np

from . import gf256
from .base import DecodeError, DecodeResult, SourceBlock, SymbolInfo


@lru_cache(maxsize=65536)
def _coeff_bytes(sbn: int, esi: int, K: int) -> bytes:
    seed = int.from_bytes(hashlib.sha256(f"rlc/{sbn}/{esi}/{K}".encode()).digest()[:8], "little")
    gen = random.Random(seed)
    while True:
        row = gen.randbytes(K)
        if any(row):
            return row


def repair_coefficients(sbn: int, esi: int, K: int) -> np.ndarray:
    """Coefficient row of encoding symbol ``esi`` (unit vector for source ESIs)."""
    if esi < K:
        row = np.zeros(K, dtype=np.uint8)
        row[esi] = 1
        return row
    return np.frombuffer(_coeff_bytes(sbn, esi, K), dtype=np.uint8).copy()


class ReferenceDecoder:
    def __init__(self, sbn: int, K: int, T: int, overhead: int = 0):
        self.sbn = sbn
        self.K = K
        self.T = T
        self.overhead = overhead
        self.symbols: dict[int, np.ndarray] = {}
        self.source_count = 0
        self.attempts = 0

    @property
    def count(self) -> int:
        return len(self.symbols)

    @property
    def received(self):
        return self.symbols.keys()

    @property
    def has_all_source(self) -> bool:
        return self.source_count == self.K

    def add_symbol(self, sym: SymbolInfo) -> bool:
        if sym.sbn != self.sbn:
            raise DecodeError(f"symbol of block {sym.sbn} offered to decoder of block {self.sbn}")
        if sym.esi in self.symbols:
            return False
        if sym.payload is None or len(sym.payload) != self.T:
            raise DecodeError("reference decoder needs a T-byte payload")
        self.symbols[sym.esi] = np.asarray(sym.payload, dtype=np.uint8)
        if sym.esi < self.K:
            self.source_count += 1
        return True

    def _split(self):
        K = self.K
        known = sorted(e for e in self.symbols if e < K)
        repair = sorted(e for e in self.symbols if e >= K)
        missing = sorted(set(range(K)) - set(known))
        return known, repair, missing

    def rank(self) -> int:
        known, repair, missing = self._split()
        if not repair or not missing:
            return len(known)
        coeffs = np.stack([repair_coefficients(self.sbn, e, self.K) for e in repair])
        return len(known) + gf256.rank(coeffs[:, missing])

    def decodable(self) -> bool:
        return self.rank() == self.K

    def try_decode(self, rng=None) -> DecodeResult:
        K, T = self.K, self.T
        if self.has_all_source:
            data = np.stack([self.symbols[i] for i in range(K)])
            return DecodeResult(True, data, eliminated=False)
        self.attempts += 1
        known, repair, missing = self._split()
        if len(repair) < len(missing):
            return DecodeResult(False, eliminated=True)
        coeffs = np.stack([repair_coefficients(self.sbn, e, K) for e in repair])
        rhs = np.stack([self.symbols[e] for e in repair]).copy()
        # Pivot on the received source rows first: they are unit vectors, so
        # their contribution is subtracted from every repair row directly.
        if known:
            src = np.stack([self.symbols[j] for j in known])
            rhs ^= gf256.matmul(coeffs[:, known], src)
        m = len(missing)
        aug = np.concatenate([coeffs[:, missing], rhs], axis=1)
        aug, pivots = gf256.eliminate(aug, m)
        if len(pivots) < m:
            return DecodeResult(False, eliminated=True)
        data = np.empty((K, T), dtype=np.uint8)
        for j in known:
            data[j] = self.symbols[j]
        for idx, col in enumerate(missing):
            data[col] = aug[idx, m:]
        return DecodeResult(True, data, eliminated=True)


class ReferenceCodec:
    name = "reference"

    def encode_symbol(self, block: SourceBlock, esi: int) -> SymbolInfo:
        if esi < 0:
            raise ValueError("ESI must be non-negative")
        if esi < block.K:
            return SymbolInfo(block.sbn, esi, block.data[esi].copy(), block.K)
        coeffs = repair_coefficients(block.sbn, esi, block.K)
        payload = gf256.matmul(coeffs[None, :], block.data)[0]
        return SymbolInfo(block.sbn, esi, payload, block.K)

    def new_decoder(self, sbn: int, K: int, T: int, overhead: int = 0) -> ReferenceDecoder:
        return ReferenceDecoder(sbn, K, T, overhead)
