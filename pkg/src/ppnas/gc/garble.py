"""Free-XOR / point-and-permute garbling, vectorised over many circuit instances.

A label is 128 bits stored as two uint64 lanes ``[lo, hi]``.  The global
offset R has its colour bit (lsb of ``lo``) set, so the two labels of a wire
always carry opposite colours.  AND gates get four rows ordered by the colour
bits of their inputs; every row holds a 16-byte ciphertext and an 8-byte tag.

Row keys come from fixed-key AES in the usual ``pi(X) xor X`` construction with
``X = 2A xor 4B xor T`` (doubling in GF(2^128)); the tweak T encodes the AND
gate index, the instance index, and a row/tag domain bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from ppnas.errors import CorruptCircuitError, FormatError
from ppnas.gc.circuits import AND, NOT, XOR, Circuit

U64 = np.uint64
KAPPA = 128
ROW_BYTES = KAPPA // 8
TAG_BYTES = 8
_FIXED_KEY = bytes(range(16))
_ONE = U64(1)
_CA = np.array([0, 0, 1, 1])
_CB = np.array([0, 1, 0, 1])
_TAG_BIT = U64(1 << 63)


def random_labels(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.integers(0, np.iinfo(np.uint64).max, size=tuple(shape) + (2,), dtype=U64, endpoint=True)


def _dbl(x: np.ndarray) -> np.ndarray:
    lo, hi = x[..., 0], x[..., 1]
    out = np.empty_like(x)
    out[..., 1] = (hi << _ONE) | (lo >> U64(63))
    out[..., 0] = (lo << _ONE) ^ ((hi >> U64(63)) * U64(0x87))
    return out


def _aes(x: np.ndarray) -> np.ndarray:
    enc = Cipher(algorithms.AES(_FIXED_KEY), modes.ECB()).encryptor()
    raw = enc.update(np.ascontiguousarray(x, dtype="<u8").tobytes()) + enc.finalize()
    return np.frombuffer(raw, dtype="<u8").astype(U64).reshape(x.shape)


def _hash_x(x: np.ndarray, tweak: np.ndarray) -> np.ndarray:
    """Pads for a precomputed ``X = 2A xor 4B`` (..., 2); returns (..., 2, 2).

    Index 0 is the 128-bit row pad, index 1 the tag block (tag in lane 0).
    """
    xs = np.empty(x.shape[:-1] + (2, 2), dtype=U64)
    xs[..., 0, :] = x
    xs[..., 1, :] = x
    xs[..., 0, 0] ^= tweak
    xs[..., 1, 0] ^= tweak
    xs[..., 1, 1] ^= _TAG_BIT
    return _aes(xs) ^ xs


def row_hash(a: np.ndarray, b: np.ndarray, tweak: np.ndarray) -> np.ndarray:
    """H(A, B, T) with ``X = 2A xor 4B xor T``."""
    return _hash_x(_dbl(a) ^ _dbl(_dbl(b)), tweak)


def _tweaks(gate_and_idx: int, n: int, offset: int) -> np.ndarray:
    return (U64(gate_and_idx) << U64(32)) | np.arange(offset, offset + n, dtype=U64)


def _colour(labels: np.ndarray) -> np.ndarray:
    return (labels[..., 0] & _ONE).astype(np.int64)


@dataclass
class GarbledCircuit:
    """Garbler-side result of garbling ``n`` instances of one circuit.

    ``tables`` (n_and, 4, 3, n) and ``decode`` (n, n_out) are sent to the
    evaluator; ``R`` and the input zero-labels stay with the garbler.
    """

    circuit: Circuit
    n: int
    tables: np.ndarray
    decode: np.ndarray
    R: np.ndarray
    garbler_zero: np.ndarray     # (n, n_gin, 2)
    evaluator_zero: np.ndarray   # (n, n_ein, 2)
    output_zero: np.ndarray      # (n, n_out, 2)
    instance_offset: int = 0

    @property
    def n_rows(self) -> int:
        return 4 * self.circuit.n_and * self.n

    def garbler_labels(self, bits: np.ndarray) -> np.ndarray:
        bits = np.asarray(bits, dtype=bool)
        return self.garbler_zero ^ (bits[..., None].astype(U64) * self.R)

    def evaluator_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        return self.evaluator_zero, self.evaluator_zero ^ self.R

    def table_bytes(self) -> bytes:
        return serialize_tables(self.tables)


def garble(c: Circuit, n: int, rng: np.random.Generator, R: np.ndarray | None = None,
           instance_offset: int = 0) -> GarbledCircuit:
    """Garble ``n`` independent instances of ``c`` under one free-XOR offset."""
    if R is None:
        R = random_labels(rng, ())
        R[0] |= _ONE
    labels = np.zeros((c.n_wires, n, 2), dtype=U64)
    inputs = np.concatenate([c.garbler_inputs, c.evaluator_inputs])
    labels[inputs] = random_labels(rng, (len(inputs), n))
    tables = np.empty((c.n_and, 4, 3, n), dtype=U64)
    R2 = _dbl(R)
    R4 = _dbl(R2)
    xs = np.empty((4, n, 2, 2), dtype=U64)   # AES input: (row, instance, pad|tag, lo|hi)
    k = 0
    for op, a, b, out in c.gates:
        if op == XOR:
            np.bitwise_xor(labels[a], labels[b], out=labels[out])
        elif op == NOT:
            np.bitwise_xor(labels[a], R, out=labels[out])
        else:
            A0, B0 = labels[a], labels[b]
            C0 = random_labels(rng, (n,))
            # row (ca, cb) holds the labels whose colours are ca and cb; va, vb are
            # their truth values as all-ones/all-zero masks
            va = U64(0) - (_colour(A0)[None, :] ^ _CA[:, None]).astype(U64)
            vb = U64(0) - (_colour(B0)[None, :] ^ _CB[:, None]).astype(U64)
            vab = va & vb
            x0 = _dbl(A0) ^ _dbl(_dbl(B0))
            tw = _tweaks(k, n, instance_offset)
            lo = (x0[:, 0] ^ tw) ^ (va & R2[0]) ^ (vb & R4[0])
            hi = x0[:, 1] ^ (va & R2[1]) ^ (vb & R4[1])
            xs[..., 0, 0] = lo
            xs[..., 1, 0] = lo
            xs[..., 0, 1] = hi
            xs[..., 1, 1] = hi ^ _TAG_BIT
            h = _aes(xs)
            t = tables[k]
            t[:, 0] = h[..., 0, 0] ^ lo ^ C0[:, 0] ^ (vab & R[0])
            t[:, 1] = h[..., 0, 1] ^ hi ^ C0[:, 1] ^ (vab & R[1])
            t[:, 2] = h[..., 1, 0] ^ lo
            labels[out] = C0
            k += 1
    return GarbledCircuit(
        circuit=c, n=n, tables=tables,
        decode=_colour(labels[c.outputs]).T.astype(bool),
        R=R,
        garbler_zero=labels[c.garbler_inputs].transpose(1, 0, 2).copy(),
        evaluator_zero=labels[c.evaluator_inputs].transpose(1, 0, 2).copy(),
        output_zero=labels[c.outputs].transpose(1, 0, 2).copy(),
        instance_offset=instance_offset,
    )


def evaluate(c: Circuit, tables: np.ndarray, garbler_labels: np.ndarray, evaluator_labels: np.ndarray,
             instance_offset: int = 0) -> np.ndarray:
    """Evaluate ``n`` instances; returns the active output labels (n, n_out, 2).

    Exactly one row per AND gate is decrypted; a tag mismatch raises
    CorruptCircuitError.
    """
    n = tables.shape[3] if c.n_and else (garbler_labels.shape[0] if len(c.garbler_inputs) else evaluator_labels.shape[0])
    labels = np.zeros((c.n_wires, n, 2), dtype=U64)
    if len(c.garbler_inputs):
        labels[c.garbler_inputs] = garbler_labels.transpose(1, 0, 2)
    if len(c.evaluator_inputs):
        labels[c.evaluator_inputs] = evaluator_labels.transpose(1, 0, 2)
    idx = np.arange(n)
    xs = np.empty((n, 2, 2), dtype=U64)
    k = 0
    for op, a, b, out in c.gates:
        if op == XOR:
            np.bitwise_xor(labels[a], labels[b], out=labels[out])
        elif op == NOT:
            labels[out] = labels[a]
        else:
            A, B = labels[a], labels[b]
            row = 2 * _colour(A) + _colour(B)
            t = tables[k]
            x = _dbl(A) ^ _dbl(_dbl(B))
            lo = x[:, 0] ^ _tweaks(k, n, instance_offset)
            xs[:, 0, 0] = lo
            xs[:, 1, 0] = lo
            xs[:, 0, 1] = x[:, 1]
            xs[:, 1, 1] = x[:, 1] ^ _TAG_BIT
            h = _aes(xs)
            flat = row * (3 * n) + idx
            tag = t.reshape(-1)[flat + 2 * n]
            if not np.array_equal(h[:, 1, 0] ^ lo, tag):
                bad = int(np.flatnonzero((h[:, 1, 0] ^ lo) != tag)[0])
                raise CorruptCircuitError(f"garbled row failed authentication (AND gate {k}, instance {bad})")
            o = labels[out]
            o[:, 0] = h[:, 0, 0] ^ lo ^ t.reshape(-1)[flat]
            o[:, 1] = h[:, 0, 1] ^ x[:, 1] ^ t.reshape(-1)[flat + n]
            k += 1
    return labels[c.outputs].transpose(1, 0, 2).copy()


def decode_outputs(out_labels: np.ndarray, decode: np.ndarray) -> np.ndarray:
    return (_colour(out_labels).astype(bool) ^ np.asarray(decode, dtype=bool))


def try_row(tables: np.ndarray, gate_and_idx: int, row: int, a: np.ndarray, b: np.ndarray,
            instance_offset: int = 0) -> np.ndarray:
    """Attempt to authenticate an arbitrary row with labels ``a``, ``b``; returns per-instance success."""
    n = a.shape[0]
    h = row_hash(a, b, _tweaks(gate_and_idx, n, instance_offset))
    return h[:, 1, 0] == tables[gate_and_idx, row, 2]


# ---------------------------------------------------------------------------
# Wire formats


def serialize_tables(tables: np.ndarray) -> bytes:
    """kappa/8-byte ciphertext rows in (gate, row, instance) order, then the 8-byte tags in the same order."""
    rows = np.moveaxis(tables[:, :, 0:2], 2, -1)
    return rows.astype("<u8").tobytes() + np.ascontiguousarray(tables[:, :, 2]).astype("<u8").tobytes()


def deserialize_tables(buf: bytes, n_and: int, n: int) -> np.ndarray:
    rows = n_and * n * 4
    if len(buf) != rows * (ROW_BYTES + TAG_BYTES):
        raise FormatError(f"garbled table payload has {len(buf)} bytes, expected {rows * (ROW_BYTES + TAG_BYTES)}")
    out = np.empty((n_and, 4, 3, n), dtype=U64)
    out[:, :, 0:2] = np.moveaxis(np.frombuffer(buf, "<u8", rows * 2).reshape(n_and, 4, n, 2), -1, 2)
    out[:, :, 2] = np.frombuffer(buf, "<u8", rows, rows * ROW_BYTES).reshape(n_and, 4, n)
    return out


def pack_labels(labels: np.ndarray) -> bytes:
    return np.ascontiguousarray(labels, dtype="<u8").tobytes()


def unpack_labels(buf: bytes, shape) -> np.ndarray:
    return np.frombuffer(buf, dtype="<u8").astype(U64).reshape(tuple(shape) + (2,))
