import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import open_, share, two_party
from ppnas.errors import ConfigError, FormatError, ProtocolError, RangeError
from ppnas.ring import (
    DEFAULT,
    U64,
    FixedPointConfig,
    add_public,
    add_shares,
    beaver_op,
    decode,
    encode,
    make_shares,
    make_triple_pair,
    matmul_shares,
    mul_fixed,
    mul_public,
    mul_shares,
    pack_ring,
    read_triples,
    reconstruct,
    to_signed,
    truncate,
    unpack_ring,
    wrap,
    write_triples,
)

finite = st.floats(-1e4, 1e4, allow_nan=False)


def test_config_validation():
    with pytest.raises(ConfigError):
        FixedPointConfig(l=65)
    with pytest.raises(ConfigError):
        FixedPointConfig(l=16, f=16)
    assert DEFAULT.bound == 2.0 ** 47


def test_encode_examples():
    assert int(encode(1.0)) == 1 << 16
    assert int(encode(-1.0)) == (1 << 64) - (1 << 16)
    assert decode(encode(0.5)) == 0.5
    with pytest.raises(RangeError):
        encode(2.0 ** 48)
    with pytest.raises(RangeError):
        encode(np.nan)


@given(st.lists(finite, min_size=1, max_size=20))
def test_encode_roundtrip_within_half_ulp(xs):
    x = np.array(xs)
    assert np.all(np.abs(decode(encode(x)) - x) <= 2.0 ** -17 + 1e-12)


@given(st.integers(1, 64), st.integers(-(2**40), 2**40))
def test_to_signed_wraps(l, v):
    cfg = FixedPointConfig(l=l, f=0)
    w = wrap(np.array([v]), cfg)
    half = 1 << (l - 1)
    expect = ((v + half) % (1 << l)) - half
    assert int(to_signed(w, cfg)[0]) == expect


@given(st.lists(finite, min_size=1, max_size=10), st.integers(0, 2**32))
def test_shares_reconstruct_and_look_uniform(xs, seed):
    x = np.array(xs)
    s0, s1 = make_shares(encode(x), np.random.default_rng(seed))
    assert np.array_equal(reconstruct(s0, s1), encode(x))


def test_share_marginal_is_uniform():
    s0, s1 = make_shares(encode(np.full(20000, 3.25)), np.random.default_rng(0))
    for s in (s0, s1):
        top = (s >> U64(60)).astype(np.int64)
        counts = np.bincount(top, minlength=16)
        chi2 = float(np.sum((counts - 1250.0) ** 2 / 1250.0))
        assert chi2 < 50  # 15 dof, p ~ 1e-5


def test_local_linear_ops():
    a, b = share([1.5, -2.0]), share([0.25, 4.0], seed=1)
    s = [add_shares(a[i], b[i]) for i in (0, 1)]
    assert np.allclose(open_(s), [1.75, 2.0])
    c = [add_public(a[i], encode(1.0), i) for i in (0, 1)]
    assert np.allclose(open_(c), [2.5, -1.0])
    m = [mul_public(a[i], 3) for i in (0, 1)]
    assert np.allclose(open_(m), [4.5, -6.0])


@given(st.lists(st.floats(-1000, 1000), min_size=1, max_size=50), st.integers(0, 2**32))
def test_truncation_within_one_ulp(xs, seed):
    x = np.array(xs)
    raw = encode(x) * U64(1 << 16)   # value at scale 2f
    s = make_shares(raw, np.random.default_rng(seed))
    t = [truncate(s[i], 16, i) for i in (0, 1)]
    got = to_signed(reconstruct(*t))
    assert np.all(np.abs(got - to_signed(encode(x))) <= 1)


def test_truncation_stochastic_rounding_unbiased():
    # value 0.25 ulp above an integer: the carry appears in about a quarter of splits
    raw = np.full(20000, (5 << 16) + (1 << 14), dtype=U64)
    s = make_shares(raw, np.random.default_rng(3))
    got = to_signed(reconstruct(truncate(s[0], 16, 0), truncate(s[1], 16, 1)))
    assert set(np.unique(got)) <= {5, 6}
    assert abs(np.mean(got == 6) - 0.25) < 0.02


def test_beaver_exhaustive_l8():
    cfg = FixedPointConfig(l=8, f=0)
    x = np.repeat(np.arange(256), 256).astype(U64)
    y = np.tile(np.arange(256), 256).astype(U64)
    xs, ys = share(x, cfg, 1, raw=True), share(y, cfg, 2, raw=True)
    z0, z1 = two_party(lambda s, a, b: mul_shares(s, a, b), xs, ys, cfg=cfg)
    assert np.array_equal(reconstruct(z0, z1, cfg), (x * y) & U64(255))


def test_beaver_fixed_point_random():
    x = np.random.default_rng(5).uniform(-256, 256, 10000)
    y = np.random.default_rng(6).uniform(-256, 256, 10000)
    x, y = decode(encode(x)), decode(encode(y))   # reference on the fixed-point operands
    out = two_party(lambda s, a, b: mul_fixed(s, a, b), share(x), share(y, seed=1))
    rel = np.abs(open_(out) - x * y) / np.maximum(np.abs(x * y), 1.0)
    assert rel.max() <= 2.0 ** -15


def test_matmul_shares():
    rng = np.random.default_rng(0)
    X, Y = rng.uniform(-2, 2, (5, 7)), rng.uniform(-2, 2, (7, 3))
    out = two_party(lambda s, a, b: matmul_shares(s, a, b), share(X), share(Y, seed=1))
    assert np.abs(open_(out) - X @ Y).max() < 1e-3


def test_matmul_shape_error():
    with pytest.raises(ConfigError):
        two_party(lambda s, a, b: matmul_shares(s, a, b), share(np.ones((2, 3))), share(np.ones((2, 3))))


def test_triple_reuse_is_rejected():
    t0, t1 = make_triple_pair(np.random.default_rng(0), (3,), (3,), "mul", DEFAULT)

    def fn(sess, x):
        t = (t0, t1)[sess.party]
        beaver_op(sess, x, x, "mul", t)
        return beaver_op(sess, x, x, "mul", t)

    with pytest.raises(ProtocolError):
        two_party(fn, share(np.ones(3)))


@given(st.integers(1, 64), st.integers(0, 2**32))
@settings(max_examples=30)
def test_pack_roundtrip(l, seed):
    cfg = FixedPointConfig(l=l, f=0)
    v = wrap(np.random.default_rng(seed).integers(0, 2**63, 17, dtype=np.int64), cfg)
    buf = pack_ring(v, cfg)
    assert len(buf) == 17 * cfg.nbytes
    assert np.array_equal(unpack_ring(buf, (17,), cfg), v)


def test_triple_file_roundtrip_and_errors():
    t0, _ = make_triple_pair(np.random.default_rng(0), (4,), (4,), "mul", DEFAULT)
    fh = io.BytesIO()
    write_triples(fh, 64, t0.a, t0.b, t0.c)
    fh.seek(0)
    l, a, b, c = read_triples(fh)
    assert l == 64 and np.array_equal(c, t0.c)
    with pytest.raises(FormatError):
        read_triples(io.BytesIO(b"XXXX" + fh.getvalue()[4:]))
    with pytest.raises(FormatError):
        read_triples(io.BytesIO(fh.getvalue()[:-3]))
