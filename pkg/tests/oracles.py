"""Independent reference computations.

Nothing here imports the package: each function recomputes a quantity from
first principles (closed forms, brute force, pure-Python field arithmetic)
so tests can compare the simulator against it, and so frozen constants in
the tests can be re-derived.
"""

from __future__ import annotations

import math

import networkx as nx

NS_PER_S = 1_000_000_000


# -- GF(256), polynomial 0x11d, by shift-and-add ---------------------------

def gf_mul(a: int, b: int, poly: int = 0x11D) -> int:
    out = 0
    while b:
        if b & 1:
            out ^= a
        b >>= 1
        a <<= 1
        if a & 0x100:
            a ^= poly
    return out


def gf_inv(a: int) -> int:
    return next(x for x in range(1, 256) if gf_mul(a, x) == 1)


def gf_rank(rows) -> int:
    m = [list(r) for r in rows]
    rank = 0
    ncols = len(m[0]) if m else 0
    for c in range(ncols):
        piv = next((i for i in range(rank, len(m)) if m[i][c]), None)
        if piv is None:
            continue
        m[rank], m[piv] = m[piv], m[rank]
        inv = gf_inv(m[rank][c])
        m[rank] = [gf_mul(inv, x) for x in m[rank]]
        for i in range(len(m)):
            if i != rank and m[i][c]:
                f = m[i][c]
                m[i] = [x ^ gf_mul(f, y) for x, y in zip(m[i], m[rank])]
        rank += 1
    return rank


def singular_probability(n: int, q: int = 256) -> float:
    """Chance that a uniform random n x n matrix over GF(q) is singular."""
    p = 1.0
    for i in range(1, n + 1):
        p *= 1.0 - q ** (-i)
    return 1.0 - p


# -- FatTree by explicit construction --------------------------------------

def fattree_graph(k: int) -> nx.Graph:
    """Textbook k-ary FatTree with labelled nodes (independent of the package)."""
    g = nx.Graph()
    h = k // 2
    for pod in range(k):
        for e in range(h):
            edge = ("edge", pod, e)
            for i in range(h):
                g.add_edge(("host", pod, e, i), edge)
            for a in range(h):
                g.add_edge(edge, ("agg", pod, a))
        for a in range(h):
            for c in range(h):
                g.add_edge(("agg", pod, a), ("core", a, c))
    return g


def fattree_counts(k: int) -> dict[str, int]:
    g = fattree_graph(k)
    kinds = [n[0] for n in g.nodes]
    return {kind: kinds.count(kind) for kind in ("host", "edge", "agg", "core")}


def shortest_paths(g: nx.Graph, u, v) -> list[list]:
    return list(nx.all_shortest_paths(g, u, v))


# -- closed-form transfer model ---------------------------------------------

def serialization_ns(nbytes: int, capacity_bps: int) -> int:
    return nbytes * 8 * NS_PER_S // capacity_bps


def unicast_fct_ns(size: int, hops: int, capacity_bps: int = 10 ** 9, delay_ns: int = 10_000,
                   mtu: int = 1500) -> int:
    """Lossless pull-clocked transfer whose window covers the round trip.

    The first symbol crosses ``hops`` store-and-forward links; afterwards the
    bottleneck delivers one MTU per serialization time.
    """
    n = math.ceil(size / mtu)
    ser = serialization_ns(mtu, capacity_bps)
    return hops * (ser + delay_ns) + (n - 1) * ser


def round_trip_packets(hops: int, capacity_bps: int = 10 ** 9, delay_ns: int = 10_000,
                       mtu: int = 1500, header: int = 64) -> float:
    """Symbols that fit in one data-plus-pull round trip."""
    data = hops * (serialization_ns(mtu, capacity_bps) + delay_ns)
    pull = hops * (serialization_ns(header, capacity_bps) + delay_ns)
    return (data + pull) / serialization_ns(mtu, capacity_bps)


def block_layout(total: int, T: int = 1500, max_block: int = 100) -> list[int]:
    n = math.ceil(total / T)
    z = math.ceil(n / max_block)
    k = math.ceil(total / (z * T))
    return [k] * (z - 1) + [n - (z - 1) * k]


def decode_latency_ns(K: int, T: int = 1500, fixed_ns: int = 10_000,
                      throughput_bps: float = 1.3e9) -> float:
    return fixed_ns + K * T * 8 / throughput_bps * NS_PER_S


def wrr_header_share(w_hdr: int = 1, w_data: int = 1, header: int = 64, mtu: int = 1500) -> float:
    return w_hdr * header / (w_hdr * header + w_data * mtu)


def mlfq_level(sent: int, thresholds=(10 * 1024, 100 * 1024, 1024 * 1024, 10 * 1024 * 1024)):
    return sum(1 for t in thresholds if sent > t)


def jain(xs) -> float:
    return sum(xs) ** 2 / (len(xs) * sum(x * x for x in xs))
