"""Boolean circuit descriptions and the builders for ADD / CMP / MUX / ReLU / pair-max.

Integers are little-endian bit lists of wire ids.  Circuits only use XOR, AND
and NOT gates; constants are derived in-circuit (``w XOR w``) so the garbler
never has to feed them.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from ppnas.errors import ConfigError, FormatError

XOR, AND, NOT = 0, 1, 2
NO_WIRE = 0xFFFFFFFF

# output visibility bitmask
TO_EVALUATOR = 1
TO_GARBLER = 2
TO_BOTH = TO_EVALUATOR | TO_GARBLER


@dataclass
class Circuit:
    n_wires: int
    garbler_inputs: np.ndarray      # wire ids, in order
    evaluator_inputs: np.ndarray
    gates: np.ndarray               # (n_gates, 4) int64: op, a, b, out
    outputs: np.ndarray
    visibility: np.ndarray          # per output, TO_* bitmask
    name: str = ""

    def __post_init__(self):
        self.and_index = np.cumsum(self.gates[:, 0] == AND) - 1 if len(self.gates) else np.zeros(0, dtype=np.int64)

    @property
    def n_and(self) -> int:
        return int(np.sum(self.gates[:, 0] == AND))

    @property
    def n_xor(self) -> int:
        return int(np.sum(self.gates[:, 0] == XOR))

    def validate(self) -> None:
        written = np.zeros(self.n_wires, dtype=bool)
        for w in np.concatenate([self.garbler_inputs, self.evaluator_inputs]):
            if written[w]:
                raise ConfigError(f"wire {w} written twice")
            written[w] = True
        for op, a, b, out in self.gates:
            if not written[a] or (op != NOT and not written[b]):
                raise ConfigError(f"gate reads unwritten wire ({a}, {b})")
            if written[out]:
                raise ConfigError(f"wire {out} written twice")
            written[out] = True
        if not np.all(written[self.outputs]):
            raise ConfigError("output wire never written")

    def eval_plain(self, garbler_bits: np.ndarray, evaluator_bits: np.ndarray) -> np.ndarray:
        """Evaluate in the clear, vectorised over instances (rows)."""
        n = garbler_bits.shape[0] if len(self.garbler_inputs) else evaluator_bits.shape[0]
        w = np.zeros((self.n_wires, n), dtype=bool)
        if len(self.garbler_inputs):
            w[self.garbler_inputs] = np.asarray(garbler_bits, dtype=bool).T
        if len(self.evaluator_inputs):
            w[self.evaluator_inputs] = np.asarray(evaluator_bits, dtype=bool).T
        for op, a, b, out in self.gates:
            if op == XOR:
                w[out] = w[a] ^ w[b]
            elif op == AND:
                w[out] = w[a] & w[b]
            else:
                w[out] = ~w[a]
        return w[self.outputs].T


class CircuitBuilder:
    def __init__(self, name: str = ""):
        self.name = name
        self.n_wires = 0
        self.gates: list[tuple[int, int, int, int]] = []
        self.g_in: list[int] = []
        self.e_in: list[int] = []
        self._zero: int | None = None

    def _wire(self) -> int:
        self.n_wires += 1
        return self.n_wires - 1

    def garbler_input(self, width: int) -> list[int]:
        ws = [self._wire() for _ in range(width)]
        self.g_in += ws
        return ws

    def evaluator_input(self, width: int) -> list[int]:
        ws = [self._wire() for _ in range(width)]
        self.e_in += ws
        return ws

    def _gate(self, op: int, a: int, b: int) -> int:
        out = self._wire()
        self.gates.append((op, a, b, out))
        return out

    def xor(self, a: int, b: int) -> int:
        return self._gate(XOR, a, b)

    def and_(self, a: int, b: int) -> int:
        return self._gate(AND, a, b)

    def not_(self, a: int) -> int:
        return self._gate(NOT, a, NO_WIRE)

    def zero(self) -> int:
        if self._zero is None:
            src = (self.g_in + self.e_in)[0]
            self._zero = self.xor(src, src)
        return self._zero

    def const(self, value: int, width: int) -> list[int]:
        z = self.zero()
        one = None
        bits = []
        for i in range(width):
            if (value >> i) & 1:
                one = one if one is not None else self.not_(z)
                bits.append(one)
            else:
                bits.append(z)
        return bits

    # -- arithmetic ---------------------------------------------------------

    def add(self, xs: list[int], ys: list[int], carry: int | None = None) -> list[int]:
        """Ripple-carry adder mod 2^width, one AND per bit except the last."""
        out = []
        c = carry
        for i, (x, y) in enumerate(zip(xs, ys)):
            if c is None:
                out.append(self.xor(x, y))
                if i + 1 < len(xs):
                    c = self.and_(x, y)
                continue
            xc = self.xor(x, c)
            out.append(self.xor(xc, y))
            if i + 1 < len(xs):
                c = self.xor(c, self.and_(xc, self.xor(y, c)))
        return out

    def sub(self, xs: list[int], ys: list[int]) -> list[int]:
        """x - y = x + ~y + 1."""
        ny = [self.not_(y) for y in ys]
        return self.add(xs, ny, carry=self.not_(self.zero()))

    def add_bit(self, xs: list[int], bit: int) -> list[int]:
        """x + bit (bit zero-extended); one AND per bit after the first."""
        out = []
        c = bit
        for i, x in enumerate(xs):
            out.append(self.xor(x, c))
            if i + 1 < len(xs):
                c = self.and_(x, c)
        return out

    def gt(self, xs: list[int], ys: list[int], signed: bool = False) -> int:
        """1 iff x > y; one AND per bit."""
        if signed:
            xs = xs[:-1] + [self.not_(xs[-1])]
            ys = ys[:-1] + [self.not_(ys[-1])]
        c = None
        for x, y in zip(xs, ys):
            if c is None:
                c = self.and_(x, self.not_(y))
            else:
                c = self.xor(x, self.and_(self.xor(x, c), self.xor(y, c)))
        return c

    def mux(self, xs: list[int], ys: list[int], b: int) -> list[int]:
        """x when b = 0, y when b = 1: x XOR (b AND (x XOR y)) per bit."""
        return [self.xor(x, self.and_(b, self.xor(x, y))) for x, y in zip(xs, ys)]

    def any_(self, xs: list[int]) -> int:
        """OR of all bits via De Morgan."""
        acc = self.not_(xs[0])
        for x in xs[1:]:
            acc = self.and_(acc, self.not_(x))
        return self.not_(acc)

    def positive(self, xs: list[int]) -> int:
        """Signed x > 0: sign bit clear and some bit set."""
        return self.and_(self.not_(xs[-1]), self.any_(xs[:-1]))

    def build(self, outputs: list[int], visibility: list[int] | int = TO_EVALUATOR) -> Circuit:
        if isinstance(visibility, int):
            visibility = [visibility] * len(outputs)
        gates = np.array(self.gates, dtype=np.int64).reshape(-1, 4)
        c = Circuit(self.n_wires, np.array(self.g_in, dtype=np.int64), np.array(self.e_in, dtype=np.int64),
                    gates, np.array(outputs, dtype=np.int64), np.array(visibility, dtype=np.int64), self.name)
        c.validate()
        return c


def _check_width(width: int, lo: int = 1) -> None:
    if not (lo <= width <= 64):
        raise ConfigError(f"circuit width {width} outside {lo}..64")


def build_add_circuit(width: int) -> Circuit:
    """Garbler x, evaluator y -> x + y mod 2^width."""
    _check_width(width)
    cb = CircuitBuilder("add")
    x, y = cb.garbler_input(width), cb.evaluator_input(width)
    return cb.build(cb.add(x, y), TO_BOTH)


def build_cmp_circuit(width: int, signed: bool = False) -> Circuit:
    """Garbler x, evaluator y -> [x > y]."""
    _check_width(width)
    cb = CircuitBuilder("cmp")
    x, y = cb.garbler_input(width), cb.evaluator_input(width)
    return cb.build([cb.gt(x, y, signed)], TO_BOTH)


def build_mux_circuit(width: int) -> Circuit:
    """Garbler x and y, evaluator selection bit b -> x if b = 0 else y."""
    _check_width(width)
    cb = CircuitBuilder("mux")
    x, y = cb.garbler_input(width), cb.garbler_input(width)
    (b,) = cb.evaluator_input(1)
    return cb.build(cb.mux(x, y, b), TO_BOTH)


def build_relu_circuit(width: int) -> Circuit:
    """ReLU over additive shares.

    Garbler inputs: r (its share), -r, and -r_b (derivative mask); evaluator
    input: its share x1.  Outputs to the evaluator only:
    ``ADD(-r, MUX(x, 0 | sign(x)))`` and ``[x > 0] - r_b``, where x = ADD(r, x1).
    """
    _check_width(width, 2)
    cb = CircuitBuilder("relu")
    r = cb.garbler_input(width)
    neg_r = cb.garbler_input(width)
    neg_rb = cb.garbler_input(width)
    x1 = cb.evaluator_input(width)
    x = cb.add(r, x1)
    b = x[-1]  # CMP(0, x) as sign-bit extraction
    m = cb.mux(x, cb.const(0, width), b)
    out = cb.add(neg_r, m)
    deriv = cb.add_bit(neg_rb, cb.and_(cb.not_(b), cb.any_(x[:-1])))
    return cb.build(out + deriv, TO_EVALUATOR)


def build_clip_circuit(width: int, hi: int) -> Circuit:
    """Clamp to [0, hi] over additive shares with a fresh output mask.

    Garbler inputs: r (its share), -m (output mask) and -r_b (derivative mask);
    evaluator input: x1.  Outputs to the evaluator: ``clamp(x, 0, hi) - m`` and
    ``[0 < x <= hi] - r_b`` with x = ADD(r, x1) read as signed and ``hi`` a
    positive ring constant.
    """
    _check_width(width, 2)
    if not (0 < hi < 1 << (width - 1)):
        raise ConfigError(f"clip bound {hi} outside 1..2^{width - 1}")
    cb = CircuitBuilder("clip")
    r = cb.garbler_input(width)
    neg_m = cb.garbler_input(width)
    neg_rb = cb.garbler_input(width)
    x1 = cb.evaluator_input(width)
    x = cb.add(r, x1)
    pos = cb.positive(x)
    over = cb.and_(pos, cb.positive(cb.sub(x, cb.const(hi, width))))
    low = [cb.and_(pos, b) for b in x]
    v = cb.mux(low, cb.const(hi, width), over)
    out = cb.add(neg_m, v)
    deriv = cb.add_bit(neg_rb, cb.and_(pos, cb.not_(over)))
    return cb.build(out + deriv, TO_EVALUATOR)


def build_ring_cmp_circuit(width: int) -> Circuit:
    """One ring comparison for pair-max: garbler d0, evaluator d1 -> [d0 - d1 > 0] (signed), to both.

    Computed as the sign bit of d1 - d0 (width - 1 ANDs); exact whenever
    d0 - d1 != -2^(width-1), i.e. for every difference inside the signed range.
    """
    _check_width(width, 2)
    cb = CircuitBuilder("ring_cmp")
    d0, d1 = cb.garbler_input(width), cb.evaluator_input(width)
    return cb.build([cb.sub(d1, d0)[-1]], TO_BOTH)


# ---------------------------------------------------------------------------
# Bit helpers


def to_bits(values, width: int) -> np.ndarray:
    """(n,) integers -> (n, width) bool, least significant bit first."""
    v = np.asarray(values, dtype=np.uint64).reshape(-1)
    shifts = np.arange(width, dtype=np.uint64)
    return ((v[:, None] >> shifts) & np.uint64(1)).astype(bool)


def from_bits(bits: np.ndarray) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.uint64)
    shifts = np.arange(bits.shape[1], dtype=np.uint64)
    return np.bitwise_or.reduce(bits << shifts, axis=1) if bits.shape[1] else np.zeros(bits.shape[0], np.uint64)


# ---------------------------------------------------------------------------
# Serialization


_CIRCUIT_HEAD = struct.Struct("<IIIII")


def serialize_circuit(c: Circuit) -> bytes:
    """Length-prefixed layout: counts, input wire ids, gates (u8 op + 3 x u32), outputs (u32 + u8 visibility)."""
    body = bytearray(_CIRCUIT_HEAD.pack(c.n_wires, len(c.garbler_inputs), len(c.evaluator_inputs),
                                        len(c.gates), len(c.outputs)))
    body += np.asarray(c.garbler_inputs, dtype="<u4").tobytes()
    body += np.asarray(c.evaluator_inputs, dtype="<u4").tobytes()
    g = np.zeros(len(c.gates), dtype=[("op", "u1"), ("a", "<u4"), ("b", "<u4"), ("out", "<u4")])
    if len(c.gates):
        g["op"], g["a"], g["out"] = c.gates[:, 0], c.gates[:, 1], c.gates[:, 3]
        g["b"] = np.where(c.gates[:, 0] == NOT, NO_WIRE, c.gates[:, 2])
    body += g.tobytes()
    o = np.zeros(len(c.outputs), dtype=[("w", "<u4"), ("vis", "u1")])
    o["w"], o["vis"] = c.outputs, c.visibility
    body += o.tobytes()
    return struct.pack("<I", len(body)) + bytes(body)


def deserialize_circuit(buf: bytes, name: str = "") -> Circuit:
    if len(buf) < 4:
        raise FormatError("truncated circuit")
    (length,) = struct.unpack_from("<I", buf)
    body = buf[4:4 + length]
    if len(body) != length:
        raise FormatError("circuit body shorter than its length prefix")
    n_wires, ng, ne, n_gates, n_out = _CIRCUIT_HEAD.unpack_from(body)
    pos = _CIRCUIT_HEAD.size
    gin = np.frombuffer(body, "<u4", ng, pos).astype(np.int64)
    pos += 4 * ng
    ein = np.frombuffer(body, "<u4", ne, pos).astype(np.int64)
    pos += 4 * ne
    gdt = np.dtype([("op", "u1"), ("a", "<u4"), ("b", "<u4"), ("out", "<u4")])
    g = np.frombuffer(body, gdt, n_gates, pos)
    pos += gdt.itemsize * n_gates
    odt = np.dtype([("w", "<u4"), ("vis", "u1")])
    o = np.frombuffer(body, odt, n_out, pos)
    gates = np.stack([g["op"], g["a"], g["b"], g["out"]], axis=1).astype(np.int64).reshape(-1, 4)
    c = Circuit(n_wires, gin, ein, gates, o["w"].astype(np.int64), o["vis"].astype(np.int64), name)
    c.validate()
    return c
