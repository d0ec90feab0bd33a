"""Fixed-point encoding and two-party additive secret sharing over Z_{2^l}.

Every private quantity in the toolkit is a numpy ``uint64`` array holding one
party's additive shares; values are kept reduced modulo ``2**l``.  Local
operations (add, scalar multiply, truncation) take the party id explicitly.
Interactive operations (``mul_shares``, ``matmul_shares``) take a protocol
session from :mod:`ppnas.runtime`.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Callable

import numpy as np

from ppnas.errors import ConfigError, FormatError, ProtocolError, RangeError

U64 = np.uint64


@dataclass(frozen=True)
class FixedPointConfig:
    """Ring width ``l`` and number of fractional bits ``f``."""

    l: int = 64
    f: int = 16

    def __post_init__(self):
        if not (0 < self.l <= 64):
            raise ConfigError(f"ring width l={self.l} outside 1..64")
        if not (0 <= self.f < self.l):
            raise ConfigError(f"fractional bits f={self.f} must satisfy 0 <= f < l")

    @property
    def mask(self) -> np.uint64:
        return U64((1 << self.l) - 1)

    @property
    def scale(self) -> int:
        return 1 << self.f

    @property
    def bound(self) -> float:
        """Exclusive bound on representable magnitudes."""
        return float(2 ** (self.l - 1 - self.f))

    @property
    def nbytes(self) -> int:
        return (self.l + 7) // 8


DEFAULT = FixedPointConfig()


def wrap(v, cfg: FixedPointConfig = DEFAULT) -> np.ndarray:
    """Reduce (possibly negative) integers into the ring."""
    arr = np.asarray(v)
    if arr.dtype != U64:
        arr = arr.astype(np.int64).astype(U64)
    if cfg.l == 64:
        return arr
    return arr & cfg.mask


def to_signed(v, cfg: FixedPointConfig = DEFAULT) -> np.ndarray:
    """Two's complement interpretation of ring elements as int64."""
    s = np.asarray(v, dtype=U64).astype(np.int64)
    if cfg.l == 64:
        return s
    s = s & np.int64((1 << cfg.l) - 1)
    return s - (((s >> (cfg.l - 1)) & 1) << cfg.l)


def encode(x, cfg: FixedPointConfig = DEFAULT) -> np.ndarray:
    """round(x * 2^f) mod 2^l; raises RangeError outside the representable range."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)) or np.any(np.abs(x) >= cfg.bound):
        raise RangeError(f"value outside fixed-point range +/-{cfg.bound:g} (l={cfg.l}, f={cfg.f})")
    return wrap(np.rint(x * cfg.scale).astype(np.int64), cfg)


def decode(v, cfg: FixedPointConfig = DEFAULT) -> np.ndarray:
    return to_signed(v, cfg).astype(np.float64) / cfg.scale


def random_ring(rng: np.random.Generator, shape, cfg: FixedPointConfig = DEFAULT) -> np.ndarray:
    """Uniform ring elements."""
    out = rng.integers(0, np.iinfo(np.uint64).max, size=shape, dtype=U64, endpoint=True)
    return out if cfg.l == 64 else out & cfg.mask


def make_shares(x, rng: np.random.Generator, cfg: FixedPointConfig = DEFAULT, share0=None):
    """Split ring element(s) ``x`` into two additive shares.

    ``share0`` pins the first share (used by tests); otherwise it is uniform.
    """
    x = wrap(x, cfg)
    s0 = random_ring(rng, x.shape, cfg) if share0 is None else wrap(share0, cfg)
    return s0, wrap(x - s0, cfg)


def reconstruct(s0, s1, cfg: FixedPointConfig = DEFAULT) -> np.ndarray:
    return wrap(np.asarray(s0, dtype=U64) + np.asarray(s1, dtype=U64), cfg)


def add_shares(x, y, cfg: FixedPointConfig = DEFAULT) -> np.ndarray:
    return wrap(np.asarray(x, dtype=U64) + np.asarray(y, dtype=U64), cfg)


def sub_shares(x, y, cfg: FixedPointConfig = DEFAULT) -> np.ndarray:
    return wrap(np.asarray(x, dtype=U64) - np.asarray(y, dtype=U64), cfg)


def neg_shares(x, cfg: FixedPointConfig = DEFAULT) -> np.ndarray:
    return wrap(U64(0) - np.asarray(x, dtype=U64), cfg)


def add_public(x, c, party: int, cfg: FixedPointConfig = DEFAULT) -> np.ndarray:
    """Add a public ring constant; only party 0 touches its share."""
    x = np.asarray(x, dtype=U64)
    if party != 0:
        return x.copy()
    return wrap(x + wrap(c, cfg), cfg)


def mul_public(x, k, cfg: FixedPointConfig = DEFAULT) -> np.ndarray:
    """Multiply by a public integer (no rescaling)."""
    return wrap(np.asarray(x, dtype=U64) * wrap(k, cfg), cfg)


def mul_public_fixed(x, c, party: int, cfg: FixedPointConfig = DEFAULT) -> np.ndarray:
    """Multiply by a public real, then truncate back to scale 2^f."""
    return truncate(mul_public(x, encode(c, cfg), cfg), cfg.f, party, cfg)


def truncate(x, f: int, party: int, cfg: FixedPointConfig = DEFAULT) -> np.ndarray:
    """Share-local probabilistic truncation by ``f`` bits.

    Party 0 shifts its share; party 1 negates, shifts and negates back.  The
    result is off by at most one unit except with probability about
    |x| / 2^(l-1).
    """
    x = np.asarray(x, dtype=U64)
    if f == 0:
        return x.copy()
    if party == 0:
        return wrap(x >> U64(f), cfg)
    return neg_shares(neg_shares(x, cfg) >> U64(f), cfg)


# ---------------------------------------------------------------------------
# Beaver triples


@dataclass
class BeaverTriple:
    """One party's shares of (a, b, c = op(a, b)); usable exactly once."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    op: str = "mul"
    _used: bool = field(default=False, repr=False)

    def consume(self) -> "BeaverTriple":
        if self._used:
            raise ProtocolError("Beaver triple reused")
        self._used = True
        return self


def _matmul(a, b):
    return np.matmul(a, b)


BILINEAR_OPS: dict[str, Callable] = {"mul": np.multiply, "matmul": _matmul}


def beaver_combine(party: int, x, y, s, t, triple: BeaverTriple, cfg: FixedPointConfig) -> np.ndarray:
    """z_i = c_i + op(s, y_i) + op(x_i, t) - i * op(s, t)."""
    op = BILINEAR_OPS[triple.op]
    z = triple.c + op(s, y) + op(x, t)
    if party == 1:
        z = z - op(s, t)
    return wrap(z, cfg)


def beaver_op(sess, x, y, op: str = "mul", triple: BeaverTriple | None = None) -> np.ndarray:
    """Interactive bilinear op on shares (no truncation): one open of (x - a, y - b)."""
    cfg = sess.cfg
    x = np.asarray(x, dtype=U64)
    y = np.asarray(y, dtype=U64)
    if triple is None:
        triple = sess.dealer.triple(x.shape, y.shape, op, cfg)
    triple.consume()
    if triple.op != op or triple.a.shape != x.shape or triple.b.shape != y.shape:
        raise ProtocolError(f"triple shape/op mismatch for {op}: {triple.a.shape} x {triple.b.shape}")
    s, t = sess.open_masked([sub_shares(x, triple.a, cfg), sub_shares(y, triple.b, cfg)])
    return beaver_combine(sess.party, x, y, s, t, triple, cfg)


def mul_shares(sess, x, y, triple: BeaverTriple | None = None) -> np.ndarray:
    """Elementwise product of shared values, exact modulo 2^l (broadcasting allowed)."""
    return beaver_op(sess, x, y, "mul", triple)


def mul_fixed(sess, x, y) -> np.ndarray:
    """Fixed-point product: Beaver multiplication followed by truncation."""
    return truncate(mul_shares(sess, x, y), sess.cfg.f, sess.party, sess.cfg)


def matmul_shares(sess, X, Y, *, rescale: bool = True) -> np.ndarray:
    """Shared matrix product with a single batched opening, then truncation."""
    X = np.asarray(X, dtype=U64)
    Y = np.asarray(Y, dtype=U64)
    if X.shape[-1] != Y.shape[-2 if Y.ndim > 1 else 0]:
        raise ConfigError(f"matmul shape mismatch {X.shape} @ {Y.shape}")
    z = beaver_op(sess, X, Y, "matmul")
    return truncate(z, sess.cfg.f, sess.party, sess.cfg) if rescale else z


def make_triple_pair(rng: np.random.Generator, shape_a, shape_b, op: str, cfg: FixedPointConfig):
    """Dealer-side generation of a fresh triple; returns the two parties' views."""
    a = random_ring(rng, shape_a, cfg)
    b = random_ring(rng, shape_b, cfg)
    c = wrap(BILINEAR_OPS[op](a, b), cfg)
    a0, a1 = make_shares(a, rng, cfg)
    b0, b1 = make_shares(b, rng, cfg)
    c0, c1 = make_shares(c, rng, cfg)
    return BeaverTriple(a0, b0, c0, op), BeaverTriple(a1, b1, c1, op)


# ---------------------------------------------------------------------------
# Wire packing and the dealer triple file


def pack_ring(v, cfg: FixedPointConfig = DEFAULT) -> bytes:
    """Little-endian, ceil(l/8) bytes per element."""
    v = np.ascontiguousarray(np.asarray(v, dtype=U64).ravel())
    k = cfg.nbytes
    if k == 8:
        return v.astype("<u8").tobytes()
    return v.astype("<u8").view(np.uint8).reshape(-1, 8)[:, :k].tobytes()


def unpack_ring(buf: bytes, shape, cfg: FixedPointConfig = DEFAULT) -> np.ndarray:
    k = cfg.nbytes
    raw = np.frombuffer(buf, dtype=np.uint8)
    n = int(np.prod(shape, dtype=np.int64))
    if raw.size != n * k:
        raise FormatError(f"ring payload has {raw.size} bytes, expected {n * k}")
    if k == 8:
        out = raw.view("<u8").astype(U64)
    else:
        full = np.zeros((n, 8), dtype=np.uint8)
        full[:, :k] = raw.reshape(n, k)
        out = full.view("<u8").ravel().astype(U64)
    return out.reshape(shape)


TRIPLE_MAGIC = b"MPCT"
TRIPLE_VERSION = 1
_TRIPLE_HEADER = struct.Struct("<4sHBQ")


def write_triples(fh: BinaryIO, l: int, a, b, c) -> None:
    """Write one "MPCT" section: header then count records of three u64 shares."""
    a, b, c = (np.asarray(v, dtype=U64).ravel() for v in (a, b, c))
    fh.write(_TRIPLE_HEADER.pack(TRIPLE_MAGIC, TRIPLE_VERSION, l, a.size))
    fh.write(np.stack([a, b, c], axis=1).astype("<u8").tobytes())


def read_triples(fh: BinaryIO):
    """Read one "MPCT" section; returns (l, a, b, c)."""
    head = fh.read(_TRIPLE_HEADER.size)
    if len(head) != _TRIPLE_HEADER.size:
        raise FormatError("truncated triple header")
    magic, version, l, count = _TRIPLE_HEADER.unpack(head)
    if magic != TRIPLE_MAGIC:
        raise FormatError(f"bad triple magic {magic!r} at offset 0")
    if version != TRIPLE_VERSION:
        raise FormatError(f"unsupported triple file version {version}")
    body = fh.read(24 * count)
    if len(body) != 24 * count:
        raise FormatError(f"triple section truncated: {len(body)} of {24 * count} bytes")
    recs = np.frombuffer(body, dtype="<u8").reshape(count, 3).astype(U64)
    return l, recs[:, 0].copy(), recs[:, 1].copy(), recs[:, 2].copy()
