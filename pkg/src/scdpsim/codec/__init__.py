"""Systematic rateless block codecs.

Two implementations share one interface: :class:`ModelCodec` only counts
symbols and samples rare decode failures, :class:`ReferenceCodec` carries
real payloads and decodes by Gaussian elimination over GF(256).
"""

from .base import (
    DecodeResult,
    DecodeError,
    SourceBlock,
    SymbolInfo,
    decode_latency,
    split_blocks,
)
from .model import ModelCodec, ModelDecoder
from .reference import ReferenceCodec, ReferenceDecoder, repair_coefficients

__all__ = [
    "DecodeError",
    "DecodeResult",
    "ModelCodec",
    "ModelDecoder",
    "ReferenceCodec",
    "ReferenceDecoder",
    "SourceBlock",
    "SymbolInfo",
    "decode_latency",
    "make_codec",
    "repair_coefficients",
    "split_blocks",
]


def make_codec(name: str, **kwargs):
    if name == "model":
        return ModelCodec(**kwargs)
    if name == "reference":
        return ReferenceCodec(**kwargs)
    raise ValueError(f"unknown codec {name!r}")
