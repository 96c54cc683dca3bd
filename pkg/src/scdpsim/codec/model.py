"""Analytic codec: counts ESIs and samples the rare decode failure."""

from __future__ import annotations

import random

from .base import DecodeError, DecodeResult, SymbolInfo

FAILURE_PROBABILITY = 1e-6


class ModelDecoder:
    def __init__(self, sbn: int, K: int, overhead: int = 2,
                 p_fail: float = FAILURE_PROBABILITY, force_failures: int = 0,
                 codec: "ModelCodec | None" = None):
        self.sbn = sbn
        self.K = K
        self.overhead = overhead
        self.p_fail = p_fail
        self.received: set[int] = set()
        self.source_count = 0
        self.attempts = 0
        self.force_failures = force_failures
        self.codec = codec

    @property
    def count(self) -> int:
        return len(self.received)

    @property
    def has_all_source(self) -> bool:
        return self.source_count == self.K

    def add_symbol(self, sym: SymbolInfo) -> bool:
        if sym.sbn != self.sbn:
            raise DecodeError(f"symbol of block {sym.sbn} offered to decoder of block {self.sbn}")
        return self.add_esi(sym.esi)

    def add_esi(self, esi: int) -> bool:
        if esi in self.received:
            return False
        self.received.add(esi)
        if esi < self.K:
            self.source_count += 1
        return True

    def decodable(self) -> bool:
        if self.has_all_source:
            return True
        return self.count >= self.K + self.overhead

    def try_decode(self, rng: random.Random | None = None) -> DecodeResult:
        if self.has_all_source:
            return DecodeResult(True, None, eliminated=False)
        if self.count < self.K + self.overhead:
            return DecodeResult(False)
        self.attempts += 1
        if self.force_failures > 0:
            self.force_failures -= 1
            return DecodeResult(False, eliminated=True)
        if self.codec is not None and self.codec.force_failures > 0:
            self.codec.force_failures -= 1
            return DecodeResult(False, eliminated=True)
        if rng is not None and self.p_fail > 0 and rng.random() < self.p_fail:
            return DecodeResult(False, eliminated=True)
        return DecodeResult(True, None, eliminated=True)


class ModelCodec:
    name = "model"

    def __init__(self, p_fail: float = FAILURE_PROBABILITY, force_failures: int = 0):
        self.p_fail = p_fail
        # test hook: the next ``force_failures`` decode attempts fail
        self.force_failures = force_failures

    def encode_symbol(self, block, esi: int) -> SymbolInfo:
        if esi < 0:
            raise ValueError("ESI must be non-negative")
        return SymbolInfo(block.sbn, esi, None, block.K)

    def new_decoder(self, sbn: int, K: int, T: int = 0, overhead: int = 2) -> ModelDecoder:
        return ModelDecoder(sbn, K, overhead, self.p_fail, codec=self)
