"""Arithmetic backends shared by the secure path and its plaintext oracles.

Composite algorithms (approximate Softmax, reciprocal, logarithm, the NAS
super-net) are written once against the :class:`Backend` interface.  Values
are fixed-point integers at a scale the algorithm tracks explicitly, and every
multiplication names its truncation shift.

``SecureBackend``
    One party's additive shares (uint64) driven by a protocol session.
``MirrorBackend``
    Cleartext int64 fixed-point values with round-to-nearest truncation.  The
    secure share-local truncation rounds stochastically (floor plus a carry
    with probability equal to the dropped fraction), so nearest rounding is
    its deterministic, unbiased counterpart and the two differ by at most one
    ulp per truncation.
``RealBackend``
    float64 values; shifts and scales are ignored.

The bounded Softmax masks are drawn from a stream keyed by the session seed so
that the mirror and real backends reproduce party 0's mask exactly.
"""

from __future__ import annotations

import contextlib

import numpy as np

from ppnas.errors import ConfigError, NumericError
from ppnas.primitives import maxpool_backward, secure_clip, secure_maxpool, secure_pair_max, secure_relu
from ppnas.ring import (
    DEFAULT,
    U64,
    FixedPointConfig,
    add_shares,
    beaver_op,
    decode,
    encode,
    mul_public,
    neg_shares,
    pack_ring,
    sub_shares,
    to_signed,
    truncate,
    unpack_ring,
    wrap,
)
from ppnas.runtime import Kind

MASK_STREAM = 0x6D61736B
ZERO_STREAM = 0x7A65726F


def mask_stream(seed: int, counter: int) -> np.random.Generator:
    return np.random.default_rng([seed & (2**64 - 1), MASK_STREAM, counter])


def power_factor(v: np.ndarray, L: int) -> np.ndarray:
    """(1 + v/L)^L in float64; raises NumericError when the base is not positive."""
    base = 1.0 + np.asarray(v, dtype=np.float64) / L
    if np.any(base <= 0):
        raise NumericError(f"local power base 1 + v/L not positive (min v = {np.min(v):.4g}, L = {L})")
    return base ** L


class Backend:
    """Interface; see module docstring.  ``f`` is the default fractional scale."""

    cfg: FixedPointConfig
    kind = "abstract"

    def __init__(self, cfg: FixedPointConfig = DEFAULT, seed: int = 0):
        self.cfg = cfg
        self.f = cfg.f
        self.seed = seed
        self._masks = 0

    # constants and conversion -------------------------------------------------
    def const(self, v, scale: int | None = None):
        raise NotImplementedError

    def zeros(self, shape):
        return self.const(np.zeros(shape))

    def decode(self, x, scale: int | None = None) -> np.ndarray:
        """Cleartext view (mirror/real only)."""
        raise NotImplementedError

    def reveal(self, x, reason: str, scale: int | None = None) -> np.ndarray:
        raise NotImplementedError

    # local linear ops ---------------------------------------------------------
    def add(self, x, y):
        raise NotImplementedError

    def sub(self, x, y):
        return self.add(x, self.neg(y))

    def neg(self, x):
        raise NotImplementedError

    def sum(self, x, axis=None, keepdims=False):
        raise NotImplementedError

    def fix(self, x):
        """Reduce the result of plain numpy adds/scatters back into the value domain."""
        return x

    def add_const(self, x, c, scale: int | None = None):
        return self.add(x, self.const(np.broadcast_to(np.asarray(c, dtype=np.float64), np.shape(x)), scale))

    def mul_int(self, x, k):
        """Exact multiply by a public integer array."""
        raise NotImplementedError

    def shift(self, x, k: int, v: int = 0):
        """Move the encoding by 2^-(k+v): the scale drops by k and the value is divided by 2^v.

        Positive totals truncate; negative totals are exact left shifts.
        """
        raise NotImplementedError

    def mul_const(self, x, c, shift: int | None = None, c_scale: int | None = None):
        """Multiply by a public real encoded at ``c_scale`` (default: ``shift``, itself default f), then shift."""
        s = self.f if shift is None else shift
        cs = s if c_scale is None else c_scale
        k = np.rint(np.asarray(c, dtype=np.float64) * (1 << cs)).astype(np.int64)
        return self.shift(self.mul_int(x, k), s)

    # interactive ops ----------------------------------------------------------
    def mul(self, x, y, shift: int | None = None, v: int = 0):
        """Elementwise product, then ``shift(.., shift, v)``."""
        raise NotImplementedError

    def matmul(self, x, y, shift: int | None = None):
        raise NotImplementedError

    def relu(self, x):
        """(max(x, 0), integer indicator [x > 0])."""
        raise NotImplementedError

    def clip(self, x, hi: float):
        """(clamp(x, 0, hi), integer indicator [0 < x <= hi]); ``hi`` in real units at scale f."""
        raise NotImplementedError

    def pair_max(self, x, y):
        raise NotImplementedError

    def maxpool(self, x):
        raise NotImplementedError

    def maxpool_backward(self, g, bits):
        return maxpool_backward(g, bits)

    def power_factors(self, c, L: int, mask_bits: int):
        """Shares of (1 + c/L)^L at scale f via bounded-mask re-sharing and local powers."""
        raise NotImplementedError

    def _next_mask(self, shape, mask_bits: int) -> np.ndarray:
        rng = mask_stream(self.seed, self._masks)
        self._masks += 1
        return rng.integers(0, 1 << mask_bits, size=shape, dtype=np.int64)

    def measure(self, name: str, count: int = 1):
        return contextlib.nullcontext()


# ---------------------------------------------------------------------------


class SecureBackend(Backend):
    kind = "secure"

    def __init__(self, sess):
        super().__init__(sess.cfg, sess.seed)
        self.sess = sess
        self.party = sess.party
        self._zeros = 0

    def measure(self, name: str, count: int = 1):
        return self.sess.measure(name, count)

    def const(self, v, scale=None):
        s = self.f if scale is None else scale
        v = np.asarray(v, dtype=np.float64)
        enc = wrap(np.rint(v * (1 << s)).astype(np.int64), self.cfg)
        return enc if self.party == 0 else np.zeros(v.shape, dtype=U64)

    def reveal(self, x, reason, scale=None):
        s = self.f if scale is None else scale
        return to_signed(self.sess.reveal(x, reason), self.cfg).astype(np.float64) / (1 << s)

    def add(self, x, y):
        return add_shares(x, y, self.cfg)

    def sub(self, x, y):
        return sub_shares(x, y, self.cfg)

    def neg(self, x):
        return neg_shares(x, self.cfg)

    def sum(self, x, axis=None, keepdims=False):
        return wrap(np.sum(np.asarray(x, dtype=U64), axis=axis, keepdims=keepdims, dtype=U64), self.cfg)

    def fix(self, x):
        return wrap(np.asarray(x, dtype=U64), self.cfg)

    def mul_int(self, x, k):
        return mul_public(x, np.asarray(k, dtype=np.int64), self.cfg)

    def rerandomize(self, x):
        """Add a common-seed zero sharing (+z / -z): same secret, uniformly split shares.

        Share-local truncation is only correct for a uniform split; locally
        derived shares (public constants, ReLU outputs) need not be.
        """
        x = np.asarray(x, dtype=U64)
        rng = np.random.default_rng([self.seed & (2**64 - 1), ZERO_STREAM, self._zeros])
        self._zeros += 1
        z = rng.integers(0, np.iinfo(np.uint64).max, size=x.shape, dtype=U64, endpoint=True)
        return add_shares(x, z, self.cfg) if self.party == 0 else sub_shares(x, z, self.cfg)

    def shift(self, x, k, v=0):
        t = k + v
        if t > 0:
            return truncate(self.rerandomize(x), t, self.party, self.cfg)
        if t == 0:
            return np.asarray(x, dtype=U64)
        return wrap(np.asarray(x, dtype=U64) << U64(-t), self.cfg)

    def mul(self, x, y, shift=None, v=0):
        with self.sess.measure("mult", int(np.broadcast(np.empty(np.shape(x)), np.empty(np.shape(y))).size)):
            z = beaver_op(self.sess, x, y, "mul")
        return self.shift(z, self.f if shift is None else shift, v)

    def matmul(self, x, y, shift=None):
        with self.sess.measure("matmul", 1):
            z = beaver_op(self.sess, x, y, "matmul")
        return self.shift(z, self.f if shift is None else shift)

    def relu(self, x):
        art = secure_relu(x, self.sess)
        return art.output, art.derivative

    def clip(self, x, hi):
        art = secure_clip(x, int(round(hi * (1 << self.f))), self.sess)
        return art.output, art.derivative

    def pair_max(self, x, y):
        art = secure_pair_max(x, y, self.sess)
        return art.max, art.selection_bit

    def maxpool(self, x):
        return secure_maxpool(x, self.sess)

    def power_factors(self, c, L, mask_bits):
        cfg, sess = self.cfg, self.sess
        c = np.asarray(c, dtype=U64)
        with sess.measure("softmax_reshare", c.size):
            if self.party == 0:
                r = wrap(self._next_mask(c.shape, mask_bits), cfg)
                sess.send(Kind.OPEN, pack_ring(sub_shares(c, r, cfg), cfg))
                mine = r
            else:
                self._masks += 1
                peer = unpack_ring(sess.recv(Kind.OPEN), c.shape, cfg)
                mine = add_shares(c, peer, cfg)
        local = encode(power_factor(decode(mine, cfg), L), cfg)
        zero = np.zeros(c.shape, dtype=U64)
        x, y = (local, zero) if self.party == 0 else (zero, local)
        return self.mul(x, y)


# ---------------------------------------------------------------------------


class MirrorBackend(Backend):
    """Cleartext fixed-point twin of the secure path (int64, nearest rounding on truncation)."""

    kind = "mirror"

    def __init__(self, cfg: FixedPointConfig = DEFAULT, seed: int = 0):
        super().__init__(cfg, seed)

    def _w(self, v):
        v = np.asarray(v, dtype=np.int64)
        if self.cfg.l == 64:
            return v
        return to_signed(v.astype(U64) & self.cfg.mask, self.cfg)

    def const(self, v, scale=None):
        s = self.f if scale is None else scale
        return self._w(np.rint(np.asarray(v, dtype=np.float64) * (1 << s)).astype(np.int64))

    def encode(self, v):
        return self._w(to_signed(encode(v, self.cfg), self.cfg))

    def decode(self, x, scale=None):
        s = self.f if scale is None else scale
        return np.asarray(x, dtype=np.int64).astype(np.float64) / (1 << s)

    def reveal(self, x, reason, scale=None):
        return self.decode(x, scale)

    def add(self, x, y):
        return self._w(np.asarray(x, dtype=np.int64) + np.asarray(y, dtype=np.int64))

    def sub(self, x, y):
        return self._w(np.asarray(x, dtype=np.int64) - np.asarray(y, dtype=np.int64))

    def neg(self, x):
        return self._w(-np.asarray(x, dtype=np.int64))

    def sum(self, x, axis=None, keepdims=False):
        return self._w(np.sum(np.asarray(x, dtype=np.int64), axis=axis, keepdims=keepdims))

    def fix(self, x):
        return self._w(x)

    def mul_int(self, x, k):
        return self._w(np.asarray(x, dtype=np.int64) * np.asarray(k, dtype=np.int64))

    def shift(self, x, k, v=0):
        x, t = np.asarray(x, dtype=np.int64), k + v
        if t > 0:
            return (x + (1 << (t - 1))) >> t
        return x if t == 0 else self._w(x << -t)

    def mul(self, x, y, shift=None, v=0):
        return self.shift(self._w(np.asarray(x, dtype=np.int64) * np.asarray(y, dtype=np.int64)),
                          self.f if shift is None else shift, v)

    def matmul(self, x, y, shift=None):
        return self.shift(self._w(np.matmul(np.asarray(x, dtype=np.int64), np.asarray(y, dtype=np.int64))),
                          self.f if shift is None else shift)

    def relu(self, x):
        x = np.asarray(x, dtype=np.int64)
        return np.maximum(x, 0), (x > 0).astype(np.int64)

    def clip(self, x, hi):
        x, h = np.asarray(x, dtype=np.int64), int(round(hi * (1 << self.f)))
        return np.clip(x, 0, h), ((x > 0) & (x <= h)).astype(np.int64)

    def pair_max(self, x, y):
        bit = np.asarray(x) > np.asarray(y)
        return np.where(bit, x, y), bit

    def maxpool(self, x):
        return _plain_maxpool(np.asarray(x, dtype=np.int64))

    def power_factors(self, c, L, mask_bits):
        c = np.asarray(c, dtype=np.int64)
        r = self._next_mask(c.shape, mask_bits)
        g0 = self.encode(power_factor(self.decode(r), L))
        g1 = self.encode(power_factor(self.decode(self.sub(c, r)), L))
        return self.mul(g0, g1)


class RealBackend(Backend):
    """float64 reference: same algorithms, no rounding."""

    kind = "real"

    def const(self, v, scale=None):
        return np.array(v, dtype=np.float64)

    def decode(self, x, scale=None):
        return np.asarray(x, dtype=np.float64)

    def reveal(self, x, reason, scale=None):
        return self.decode(x)

    def add(self, x, y):
        return np.asarray(x) + np.asarray(y)

    def sub(self, x, y):
        return np.asarray(x) - np.asarray(y)

    def neg(self, x):
        return -np.asarray(x)

    def sum(self, x, axis=None, keepdims=False):
        return np.sum(x, axis=axis, keepdims=keepdims)

    def mul_int(self, x, k):
        return np.asarray(x) * np.asarray(k, dtype=np.float64)

    def shift(self, x, k, v=0):
        return np.asarray(x, dtype=np.float64) * 2.0 ** -v

    def mul_const(self, x, c, shift=None, c_scale=None):
        return np.asarray(x) * np.asarray(c, dtype=np.float64)

    def mul(self, x, y, shift=None, v=0):
        return np.asarray(x) * np.asarray(y) * 2.0 ** -v

    def matmul(self, x, y, shift=None):
        return np.matmul(x, y)

    def relu(self, x):
        x = np.asarray(x, dtype=np.float64)
        return np.maximum(x, 0.0), (x > 0).astype(np.float64)

    def clip(self, x, hi):
        x = np.asarray(x, dtype=np.float64)
        return np.clip(x, 0.0, hi), ((x > 0) & (x <= hi)).astype(np.float64)

    def pair_max(self, x, y):
        bit = np.asarray(x) > np.asarray(y)
        return np.where(bit, x, y), bit

    def maxpool(self, x):
        return _plain_maxpool(np.asarray(x, dtype=np.float64))

    def power_factors(self, c, L, mask_bits):
        c = np.asarray(c, dtype=np.float64)
        r = self._next_mask(c.shape, mask_bits) / float(1 << self.f)
        return power_factor(r, L) * power_factor(c - r, L)


def _plain_maxpool(x):
    if x.ndim < 2 or x.shape[-1] % 2 or x.shape[-2] % 2:
        raise ConfigError(f"max-pooling needs even spatial dims, got {x.shape}")
    a, b, c, d = x[..., 0::2, 0::2], x[..., 0::2, 1::2], x[..., 1::2, 0::2], x[..., 1::2, 1::2]
    b1, b2 = a > b, c > d
    m1, m2 = np.where(b1, a, b), np.where(b2, c, d)
    b3 = m1 > m2
    return np.where(b3, m1, m2), np.stack([b1, b2, b3], axis=-1)


def as_backend(obj) -> Backend:
    """Accept a Backend or a protocol Session."""
    if isinstance(obj, Backend):
        return obj
    be = getattr(obj, "_backend", None)
    if be is None:
        be = SecureBackend(obj)
        obj._backend = be
    return be


__all__ = ["Backend", "SecureBackend", "MirrorBackend", "RealBackend", "as_backend", "mask_stream",
           "power_factor"]
