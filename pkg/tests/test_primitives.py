import numpy as np
import pytest

from conftest import open_, share, two_party
from ppnas.errors import ConfigError
from ppnas.primitives import maxpool_backward, secure_clip, secure_maxpool, secure_pair_max, secure_relu, winner_index
from ppnas.ring import DEFAULT, U64, FixedPointConfig, encode, reconstruct, to_signed

L8 = FixedPointConfig(l=8, f=0)


def value_by_mask():
    """Every (value, mask) pair at l=8: party 0 holds the mask, party 1 the masked value."""
    x = np.repeat(np.arange(256), 256).astype(U64)
    r = np.tile(np.arange(256), 256).astype(U64)
    return x, (r, (x - r) & U64(255))


def test_relu_exhaustive_l8():
    x, sh = value_by_mask()
    a0, a1 = two_party(lambda s, v: secure_relu(v, s), sh, cfg=L8)
    sx = to_signed(x, L8)
    assert np.array_equal(to_signed(reconstruct(a0.output, a1.output, L8), L8), np.maximum(sx, 0))
    assert np.array_equal(reconstruct(a0.derivative, a1.derivative, L8), (sx > 0).astype(U64))


def test_pair_max_exhaustive_l8():
    # x shared as (mask, x - mask); y fixed per block so every x-y difference appears
    x, sh = value_by_mask()
    y = np.tile(np.arange(256), 256).astype(U64)[::-1].copy()
    ysh = (np.zeros_like(y), y)
    m0, m1 = two_party(lambda s, a, b: secure_pair_max(a, b, s), sh, ysh, cfg=L8)
    sx, sy = to_signed(x, L8), to_signed(y, L8)
    d = to_signed(x - y, L8)
    ok = d != -128   # the one difference outside the signed range
    assert np.array_equal(m0.selection_bit, m1.selection_bit)
    assert np.array_equal(m0.selection_bit[ok], (d > 0)[ok])
    got = to_signed(reconstruct(m0.max, m1.max, L8), L8)
    # ring semantics: x wins iff x - y is positive as a signed l-bit value
    assert np.array_equal(got[ok], np.where(d > 0, sx, sy)[ok])
    # which is the true max whenever both operands lie in [-2^(l-2), 2^(l-2))
    small = (sx >= -64) & (sx < 64) & (sy >= -64) & (sy < 64)
    assert np.array_equal(got[small], np.maximum(sx, sy)[small])


def test_relu_random_l64_exact():
    x = np.random.default_rng(0).integers(-(2**62), 2**62, 10000)
    sh = share(x.astype(U64), raw=True)
    a0, a1 = two_party(lambda s, v: secure_relu(v, s), sh)
    assert np.array_equal(to_signed(reconstruct(a0.output, a1.output)), np.maximum(x, 0))
    assert np.array_equal(reconstruct(a0.derivative, a1.derivative), (x > 0).astype(U64))


def test_relu_preserves_shape_and_empty():
    sh = share(np.zeros((2, 0, 3)))
    a0, _ = two_party(lambda s, v: secure_relu(v, s), sh)
    assert a0.output.shape == (2, 0, 3)


def test_clip_outputs_are_fresh():
    x = np.array([-3.0, 0.5, 7.0, 20.0, 16.0])
    sh = share(x)
    a0, a1 = two_party(lambda s, v: secure_clip(v, int(encode(16.0)), s), sh)
    assert np.allclose(open_((a0.output, a1.output)), np.clip(x, 0, 16))
    assert np.array_equal(reconstruct(a0.derivative, a1.derivative), [0, 1, 1, 0, 1])
    assert not np.any(a0.output == sh[0])


def test_maxpool_and_backward():
    rng = np.random.default_rng(1)
    x = rng.uniform(-10, 10, (3, 2, 4, 6))
    m0, m1 = two_party(lambda s, v: secure_maxpool(v, s), share(x))
    pooled, bits = open_((m0[0], m1[0])), m0[1]
    ref = x.reshape(3, 2, 2, 2, 3, 2).max(axis=(3, 5))
    assert np.allclose(pooled, ref, atol=1e-4)
    g = rng.uniform(size=ref.shape)
    back = maxpool_backward(g, bits)
    assert np.allclose(back.sum(), g.sum())
    assert np.allclose(back[x.reshape(back.shape) == np.repeat(np.repeat(ref, 2, -2), 2, -1)].sum(), g.sum())
    assert winner_index(bits).max() <= 3


def test_maxpool_rejects_odd_dims():
    with pytest.raises(ConfigError):
        two_party(lambda s, v: secure_maxpool(v, s), share(np.zeros((3, 3))))


def test_pair_max_shape_mismatch():
    with pytest.raises(ConfigError):
        two_party(lambda s, a, b: secure_pair_max(a, b, s), share(np.zeros(3)), share(np.zeros(4)))


def test_comm_ordering_at_l64():
    from ppnas.experiments import bench

    relu, mx = bench("relu", 64, DEFAULT), bench("max", 64, DEFAULT)
    assert mx["comm_kb"] < relu["comm_kb"]
