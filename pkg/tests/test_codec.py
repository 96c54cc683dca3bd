import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from scdpsim.codec import (DecodeError, ModelCodec, ReferenceCodec, SourceBlock, SymbolInfo,
                           decode_latency, gf256, make_codec, repair_coefficients, split_blocks)

T = 16


def block(K, sbn=0, seed=0):
    rng = np.random.default_rng(seed)
    return SourceBlock(sbn, K, T, rng.integers(0, 256, size=(K, T), dtype=np.uint8))


def feed(dec, codec, blk, esis):
    for e in esis:
        dec.add_symbol(codec.encode_symbol(blk, e))
    return dec


# -- field arithmetic against the shift-and-add oracle ----------------------

def test_gf_multiplication_table():
    rng = random.Random(3)
    for _ in range(2000):
        a, b = rng.randrange(256), rng.randrange(256)
        assert gf256.mul(a, b) == oracles.gf_mul(a, b)
    for a in range(1, 256):
        assert gf256.mul(a, gf256.inv(a)) == 1


@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2 ** 32))
def test_gf_rank_matches_oracle(r, c, seed):
    rng = np.random.default_rng(seed)
    m = rng.integers(0, 256, size=(r, c), dtype=np.uint8)
    if seed % 3 == 0 and r > 1:
        m[-1] = m[0]  # force a dependent row sometimes
    assert gf256.rank(m) == oracles.gf_rank(m.tolist())


# -- encoding ---------------------------------------------------------------

def test_source_symbol_is_verbatim():
    b = block(8)
    sym = ReferenceCodec().encode_symbol(b, 3)
    assert np.array_equal(sym.payload, b.data[3])


def test_three_repair_symbols_are_distinct():
    b = block(8)
    c = ReferenceCodec()
    reps = [c.encode_symbol(b, e).payload.tobytes() for e in (8, 9, 10)]
    assert len(set(reps)) == 3 and all(r not in [b.data[i].tobytes() for i in range(8)]
                                       for r in reps)


def test_k1_repair_is_a_nonzero_multiple():
    b = block(1)
    c = ReferenceCodec()
    for esi in range(1, 20):
        coef = int(repair_coefficients(0, esi, 1)[0])
        assert coef != 0
        want = [oracles.gf_mul(coef, int(x)) for x in b.data[0]]
        assert c.encode_symbol(b, esi).payload.tolist() == want


def test_repair_symbols_are_host_independent():
    b = block(10, sbn=4)
    assert np.array_equal(ReferenceCodec().encode_symbol(b, 31).payload,
                          ReferenceCodec().encode_symbol(b, 31).payload)


def test_negative_esi():
    with pytest.raises(ValueError):
        ReferenceCodec().encode_symbol(block(4), -1)


# -- decoding ---------------------------------------------------------------

def test_duplicate_esi_is_ignored():
    c = ReferenceCodec()
    b = block(8)
    d = c.new_decoder(0, 8, T)
    assert d.add_symbol(c.encode_symbol(b, 2)) is True
    assert d.add_symbol(c.encode_symbol(b, 2)) is False
    assert d.count == 1


def test_wrong_block_rejected():
    c = ReferenceCodec()
    with pytest.raises(DecodeError):
        c.new_decoder(1, 8, T).add_symbol(c.encode_symbol(block(8, sbn=0), 0))


@pytest.mark.parametrize("codec", [ModelCodec(), ReferenceCodec()], ids=["model", "reference"])
def test_all_source_needs_no_elimination(codec):
    b = block(8)
    d = feed(codec.new_decoder(0, 8, T), codec, b, range(8))
    assert d.decodable()
    res = d.try_decode(random.Random(0))
    assert res.success and not res.eliminated
    if codec.name == "reference":
        assert np.array_equal(res.data, b.data)


def test_k100_all_source_has_no_latency_path():
    c = ModelCodec()
    d = c.new_decoder(0, 100)
    for e in range(100):
        d.add_esi(e)
    res = d.try_decode(random.Random(1))
    assert res.success and not res.eliminated and d.attempts == 0


def test_loss_example_decodes():
    # K=8: two source symbols lost, repairs 9, 11, 12 received (one more than needed)
    c = ReferenceCodec()
    b = block(8, seed=5)
    d = feed(c.new_decoder(0, 8, T), c, b, [0, 1, 2, 3, 4, 5, 9, 11, 12])
    assert d.decodable()
    res = d.try_decode()
    assert res.success and res.eliminated and np.array_equal(res.data, b.data)


def test_model_codec_overhead_target():
    c = ModelCodec(p_fail=0.0)
    d = c.new_decoder(0, 100, overhead=2)
    for e in list(range(95)) + list(range(100, 106)):
        d.add_esi(e)
    assert d.count == 101 and not d.decodable()
    assert not d.try_decode(random.Random(0)).success
    d.add_esi(106)
    res = d.try_decode(random.Random(0))
    assert res.success and res.eliminated


def test_model_codec_failure_rate_is_tiny():
    c = ModelCodec()
    rng = random.Random(2)
    fails = 0
    for i in range(20000):
        d = c.new_decoder(i, 100)
        for e in list(range(98)) + [100, 101, 102, 103]:
            d.add_esi(e)
        fails += not d.try_decode(rng).success
    assert fails <= 1


def test_forced_failure_hook():
    c = ModelCodec(force_failures=1)
    d = c.new_decoder(0, 4)
    for e in (0, 1, 4, 5, 6, 7):
        d.add_esi(e)
    assert not d.try_decode(random.Random(0)).success
    assert d.try_decode(random.Random(0)).success


def test_reference_failure_rate_k32():
    # [DERIVED] a random 32x32 matrix over GF(256) is singular with
    # probability 1 - prod(1 - 256^-i) = 0.0039215 (oracles.singular_probability)
    p = oracles.singular_probability(32)
    assert p == pytest.approx(0.0039215, rel=1e-4)
    trials = 10_000
    fails = 0
    for sbn in range(trials):
        rows = np.stack([repair_coefficients(sbn, 32 + j, 32) for j in range(32)])
        fails += gf256.rank(rows) < 32
    sd = (p * (1 - p) / trials) ** 0.5
    assert abs(fails / trials - p) < 4 * sd


@given(st.sampled_from([1, 2, 3, 8, 17, 40]), st.integers(0, 2 ** 31), st.data())
def test_round_trip_any_full_rank_set(K, seed, data):
    c = ReferenceCodec()
    b = block(K, sbn=seed % 7, seed=seed)
    lost = data.draw(st.sets(st.integers(0, K - 1), max_size=K))
    extra = data.draw(st.integers(0, 3))
    esis = [e for e in range(K) if e not in lost] + list(range(K, K + len(lost) + extra))
    order = data.draw(st.permutations(esis))
    d = feed(c.new_decoder(b.sbn, K, T), c, b, order)
    if d.rank() == K:
        res = d.try_decode()
        assert res.success and np.array_equal(res.data, b.data)
    else:
        assert not d.try_decode().success


@given(st.integers(0, 2 ** 31), st.data())
def test_origin_independence(seed, data):
    # the same ESI set fed by any interleaving of three senders decodes identically
    K = 12
    c = ReferenceCodec()
    b = block(K, seed=seed)
    esis = sorted(data.draw(st.sets(st.integers(0, 30), min_size=K + 2, max_size=K + 6)))
    results = []
    for _ in range(2):
        order = data.draw(st.permutations(esis))
        d = feed(c.new_decoder(0, K, T), c, b, order)
        res = d.try_decode()
        results.append((res.success, None if res.data is None else res.data.tobytes()))
    assert results[0] == results[1]


@pytest.mark.parametrize("K", [1, 2, 8, 100, 256])
def test_model_and_reference_agree_with_all_source(K):
    for codec in (ModelCodec(), ReferenceCodec()):
        b = block(K)
        d = feed(codec.new_decoder(0, K, T), codec, b, list(range(K)) + [K, K + 1])
        assert d.try_decode(random.Random(0)).success


def test_make_codec():
    assert make_codec("model").name == "model"
    assert make_codec("reference").name == "reference"
    with pytest.raises(ValueError):
        make_codec("raptorq")


# -- latency and layout -------------------------------------------------------

def test_decode_latency_calibration():
    assert decode_latency(100, 1500) == round(oracles.decode_latency_ns(100))
    assert decode_latency(100, 1500) == pytest.approx(933_000, abs=1_000)
    assert decode_latency(1, 1500) == round(oracles.decode_latency_ns(1))
    with pytest.raises(ValueError):
        decode_latency(0, 1500)


def test_decode_latency_is_linear():
    per_symbol = oracles.decode_latency_ns(1, fixed_ns=0)
    # both sides are rounded to whole nanoseconds
    assert abs(decode_latency(64, 1500, fixed_ns=0) - 2 * decode_latency(32, 1500, fixed_ns=0)) <= 1
    assert decode_latency(50, 1500) - decode_latency(25, 1500) == pytest.approx(25 * per_symbol, abs=1)


def test_two_megabyte_layout():
    # [DERIVED] ceil(2 * 2**20 / 1500) = 1399 symbols -> 14 sub-blocks of 100 and a last of 99
    lay = split_blocks(2 * 2 ** 20, 1500)
    assert lay.num_blocks == 14 and lay.symbols == 1399
    assert lay.sizes() == oracles.block_layout(2 * 2 ** 20) == [100] * 13 + [99]


@given(st.integers(1, 5 * 2 ** 20), st.sampled_from([64, 1000, 1500]))
def test_layout_covers_every_byte(total, T):
    lay = split_blocks(total, T)
    sizes = lay.sizes()
    assert sum(sizes) == lay.symbols == -(-total // T)
    assert all(1 <= k <= 100 for k in sizes)


def test_source_block_round_trip():
    raw = bytes(range(200)) * 3
    b = SourceBlock.from_bytes(0, raw, 64)
    assert b.K == 10 and b.to_bytes(len(raw)) == raw


def test_symbol_info_kind():
    assert SymbolInfo(0, 3).is_source(4) and not SymbolInfo(0, 4).is_source(4)
