import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import share, two_party
from ppnas.backend import MirrorBackend, RealBackend, as_backend, mask_stream, power_factor
from ppnas.errors import ConfigError, NumericError
from ppnas.ring import FixedPointConfig


@given(st.integers(-(2**40), 2**40), st.integers(1, 20))
def test_mirror_shift_rounds_to_nearest(v, t):
    got = int(MirrorBackend().shift(np.array([v]), t)[0])
    assert abs(got - v / 2**t) <= 0.5
    assert got == int(np.floor(v / 2**t + 0.5))


def test_mirror_wraps_narrow_ring():
    m = MirrorBackend(FixedPointConfig(l=16, f=4))
    assert int(m.add(np.array([2**15 - 1]), np.array([1]))[0]) == -(2**15)
    assert int(m.fix(np.array([2**16 + 3]))[0]) == 3


def test_real_backend_ignores_scales():
    r = RealBackend()
    assert r.shift(np.array([3.0]), 16)[0] == 3.0
    assert r.shift(np.array([3.0]), 0, 1)[0] == 1.5
    assert r.mul(np.array([2.0]), np.array([4.0]), shift=30, v=2)[0] == 2.0


def test_mask_stream_shared_by_backends():
    a = mask_stream(5, 3).integers(0, 256, 4)
    b = mask_stream(5, 3).integers(0, 256, 4)
    assert np.array_equal(a, b)
    m, r = MirrorBackend(seed=5), RealBackend(seed=5)
    assert np.array_equal(m._next_mask((3,), 8), r._next_mask((3,), 8))


def test_power_factor():
    assert power_factor(np.array([4.0]), 4)[0] == 16.0
    with pytest.raises(NumericError):
        power_factor(np.array([-5.0]), 4)


def test_secure_ops_match_mirror():
    rng = np.random.default_rng(0)
    x, y = rng.uniform(-50, 50, (4, 5)), rng.uniform(-2, 2, (5, 3))

    def fn(sess, a, b):
        be = as_backend(sess)
        p = be.matmul(a, b)
        q = be.mul_const(p, 0.3)
        return be.reveal(be.add_const(q, 1.0), "test")

    got, _ = two_party(fn, share(x), share(y, seed=1), test_reveal=True)
    m = MirrorBackend()
    ref = m.decode(m.add_const(m.mul_const(m.matmul(m.encode(x), m.encode(y)), 0.3), 1.0))
    assert np.abs(got - ref).max() <= 4 * 2.0 ** -16


def test_plain_maxpool_rejects_odd():
    with pytest.raises(ConfigError):
        MirrorBackend().maxpool(np.zeros((3, 3), dtype=np.int64))
