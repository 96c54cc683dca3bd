"""GF(2^8) arithmetic over the polynomial x^8 + x^4 + x^3 + x^2 + 1 (0x11d)."""

from __future__ import annotations

import numpy as np

POLY = 0x11D


def _tables():
    exp = np.zeros(512, dtype=np.uint8)
    log = np.zeros(256, dtype=np.int32)
    x = 1
    for i in range(255):
        exp[i] = x
        log[x] = i
        x <<= 1
        if x & 0x100:
            x ^= POLY
    exp[255:510] = exp[0:255]
    return exp, log


EXP, LOG = _tables()

# Full multiplication table: MUL[a, b] == a * b. 64 KiB, makes row ops a gather.
_a = np.arange(256)
MUL = np.zeros((256, 256), dtype=np.uint8)
MUL[1:, 1:] = EXP[(LOG[_a[1:], None] + LOG[None, _a[1:]]) % 255]
INV = np.zeros(256, dtype=np.uint8)
INV[1:] = EXP[(255 - LOG[1:]) % 255]


def mul(a: int, b: int) -> int:
    return int(MUL[a, b])


def inv(a: int) -> int:
    if a == 0:
        raise ZeroDivisionError("0 has no inverse in GF(256)")
    return int(INV[a])


def scale(c: int, row: np.ndarray) -> np.ndarray:
    return MUL[c][row]


def matmul(a: np.ndarray, b: np.ndarray, chunk_bytes: int = 1 << 24) -> np.ndarray:
    """Matrix product over GF(256); ``a`` is (r, n), ``b`` is (n, m)."""
    a = np.asarray(a, dtype=np.uint8)
    b = np.asarray(b, dtype=np.uint8)
    r, n = a.shape
    m = b.shape[1]
    out = np.empty((r, m), dtype=np.uint8)
    step = max(1, chunk_bytes // max(1, n * m))
    for lo in range(0, r, step):
        prod = MUL[a[lo:lo + step, :, None], b[None, :, :]]
        out[lo:lo + step] = np.bitwise_xor.reduce(prod, axis=1)
    return out


def eliminate(mat: np.ndarray, ncols: int) -> tuple[np.ndarray, list[int]]:
    """Gauss-Jordan reduce the first ``ncols`` columns of ``mat`` in place.

    Returns the reduced matrix and the list of pivot rows, one per pivot
    column found (``len(pivots)`` is the rank of the coefficient part).
    """
    rows = mat.shape[0]
    pivots: list[int] = []
    r = 0
    for c in range(ncols):
        if r >= rows:
            break
        nz = np.flatnonzero(mat[r:, c])
        if nz.size == 0:
            continue
        p = r + int(nz[0])
        if p != r:
            mat[[r, p]] = mat[[p, r]]
        lead = int(mat[r, c])
        if lead != 1:
            mat[r] = MUL[INV[lead]][mat[r]]
        factors = mat[:, c].copy()
        factors[r] = 0
        hit = np.flatnonzero(factors)
        if hit.size:
            mat[hit] ^= MUL[factors[hit][:, None], mat[r][None, :]]
        pivots.append(r)
        r += 1
    return mat, pivots


def rank(mat: np.ndarray) -> int:
    work = np.array(mat, dtype=np.uint8, copy=True)
    _, pivots = eliminate(work, work.shape[1])
    return len(pivots)
