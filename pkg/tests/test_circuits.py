import numpy as np
import pytest

from ppnas.errors import ConfigError, FormatError
from ppnas.gc.circuits import (
    TO_BOTH,
    CircuitBuilder,
    build_add_circuit,
    build_clip_circuit,
    build_cmp_circuit,
    build_mux_circuit,
    build_relu_circuit,
    build_ring_cmp_circuit,
    deserialize_circuit,
    from_bits,
    serialize_circuit,
    to_bits,
)

W = 8
X = np.repeat(np.arange(256), 256)
Y = np.tile(np.arange(256), 256)


def signed(v, w=W):
    v = np.asarray(v) % (1 << w)
    return np.where(v >= 1 << (w - 1), v - (1 << w), v)


def run(c, g, e):
    return c.eval_plain(to_bits(g, W) if g is not None else None, to_bits(e, W) if e is not None else None)


def test_add_exhaustive():
    out = from_bits(run(build_add_circuit(W), X, Y)).astype(np.int64)
    assert np.array_equal(out, (X + Y) % 256)


@pytest.mark.parametrize("sgn", [False, True])
def test_cmp_exhaustive(sgn):
    out = run(build_cmp_circuit(W, signed=sgn), X, Y)[:, 0]
    ref = signed(X) > signed(Y) if sgn else X > Y
    assert np.array_equal(out, ref)


def test_mux_exhaustive():
    c = build_mux_circuit(W)
    for b in (0, 1):
        g = np.concatenate([to_bits(X, W), to_bits(Y, W)], axis=1)
        out = from_bits(c.eval_plain(g, np.full((len(X), 1), b, dtype=bool))).astype(np.int64)
        assert np.array_equal(out, Y if b else X)


def test_relu_exhaustive_value_by_mask():
    # garbler holds r, -r, -rb; evaluator holds x1 = x - r
    c = build_relu_circuit(W)
    x, r = X, Y
    rb = (r * 7 + 3) % 256
    g = np.concatenate([to_bits(r, W), to_bits(-r % 256, W), to_bits(-rb % 256, W)], axis=1)
    out = c.eval_plain(g, to_bits((x - r) % 256, W))
    relu_share = from_bits(out[:, :W]).astype(np.int64)
    deriv_share = from_bits(out[:, W:]).astype(np.int64)
    sx = signed(x)
    assert np.array_equal((relu_share + r) % 256, np.maximum(sx, 0) % 256)
    assert np.array_equal((deriv_share + rb) % 256, (sx > 0).astype(np.int64))


def test_clip_exhaustive():
    hi = 40
    c = build_clip_circuit(W, hi)
    x, r = X, Y
    m = (r * 5 + 1) % 256
    rb = (r * 3 + 11) % 256
    g = np.concatenate([to_bits(r, W), to_bits(-m % 256, W), to_bits(-rb % 256, W)], axis=1)
    out = c.eval_plain(g, to_bits((x - r) % 256, W))
    v = (from_bits(out[:, :W]).astype(np.int64) + m) % 256
    d = (from_bits(out[:, W:]).astype(np.int64) + rb) % 256
    sx = signed(x)
    assert np.array_equal(v, np.clip(sx, 0, hi))
    assert np.array_equal(d, ((sx > 0) & (sx <= hi)).astype(np.int64))


def test_ring_cmp_exhaustive():
    out = run(build_ring_cmp_circuit(W), X, Y)[:, 0]
    diff = signed(X - Y)
    ok = diff != -128   # the single unrepresentable difference
    assert np.array_equal(out[ok], (diff > 0)[ok])


def test_and_counts():
    assert build_ring_cmp_circuit(64).n_and == 63
    assert build_add_circuit(64).n_and == 63
    assert build_cmp_circuit(64).n_and == 64
    assert build_ring_cmp_circuit(64).n_and < build_relu_circuit(64).n_and


def test_width_bounds():
    with pytest.raises(ConfigError):
        build_add_circuit(65)
    with pytest.raises(ConfigError):
        build_clip_circuit(8, 200)


def test_serialization_roundtrip():
    c = build_relu_circuit(16)
    c2 = deserialize_circuit(serialize_circuit(c))
    g = np.random.default_rng(0).integers(0, 2, (50, 48)).astype(bool)
    e = np.random.default_rng(1).integers(0, 2, (50, 16)).astype(bool)
    assert np.array_equal(c.eval_plain(g, e), c2.eval_plain(g, e))
    with pytest.raises(FormatError):
        deserialize_circuit(serialize_circuit(c)[:-5])


def test_builder_rejects_double_write():
    cb = CircuitBuilder()
    a = cb.garbler_input(1)[0]
    cb.gates.append((0, a, a, a))
    with pytest.raises(ConfigError):
        cb.build([a], TO_BOTH)
