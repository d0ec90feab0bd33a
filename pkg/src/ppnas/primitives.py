"""Garbled-circuit sub-protocols on additive shares: ReLU, pair-max and 2x2 max-pooling.

Party 0 always garbles and party 1 evaluates.  Elementwise calls on a tensor
are batched into a single circuit bundle.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ppnas.errors import ConfigError
from ppnas.gc.circuits import build_clip_circuit, build_relu_circuit, build_ring_cmp_circuit, from_bits, to_bits
from ppnas.gc.protocol import run_circuit
from ppnas.ring import U64, neg_shares, random_ring, sub_shares

relu_circuit = lru_cache(maxsize=None)(build_relu_circuit)
cmp_circuit = lru_cache(maxsize=None)(build_ring_cmp_circuit)
clip_circuit = lru_cache(maxsize=None)(build_clip_circuit)


@dataclass
class ReluArtifacts:
    """Shares of max(x, 0) and of the integer indicator [x > 0]."""

    output: np.ndarray
    derivative: np.ndarray


@dataclass
class MaxArtifacts:
    """Shares of max(x, y); ``selection_bit`` is public and set iff x > y."""

    max: np.ndarray
    selection_bit: np.ndarray


def secure_relu(x, sess) -> ReluArtifacts:
    """ReLU via one garbled bundle (CMP, MUX and two ADDs per element).

    The garbler's output share is its input share r.  The evaluator learns
    relu(x) - r and [x > 0] - r_b, where r_b is a fresh garbler mask.
    """
    cfg = sess.cfg
    x = np.asarray(x, dtype=U64)
    shape, n, w = x.shape, x.size, cfg.l
    if n == 0:
        return ReluArtifacts(x.copy(), x.copy())
    c = relu_circuit(w)
    with sess.measure("relu", n):
        flat = x.reshape(-1)
        if sess.party == 0:
            rb = random_ring(sess.rng, n, cfg)
            bits = np.concatenate([to_bits(flat, w), to_bits(neg_shares(flat, cfg), w),
                                   to_bits(neg_shares(rb, cfg), w)], axis=1)
            run_circuit(sess, c, n, bits)
            out, deriv = flat.copy(), rb
        else:
            res = run_circuit(sess, c, n, to_bits(flat, w))
            out, deriv = from_bits(res[:, :w]), from_bits(res[:, w:])
    return ReluArtifacts(out.reshape(shape), deriv.reshape(shape))


def secure_clip(x, hi: int, sess) -> ReluArtifacts:
    """clamp(x, 0, hi) for a positive ring constant ``hi``, plus shares of [0 < x <= hi].

    Unlike ReLU both output shares are fresh: the garbler keeps a new random
    mask m, so clipped values never cancel against the input shares.
    """
    cfg = sess.cfg
    x = np.asarray(x, dtype=U64)
    shape, n, w = x.shape, x.size, cfg.l
    if n == 0:
        return ReluArtifacts(x.copy(), x.copy())
    c = clip_circuit(w, int(hi))
    with sess.measure("clip", n):
        flat = x.reshape(-1)
        if sess.party == 0:
            m = random_ring(sess.rng, n, cfg)
            rb = random_ring(sess.rng, n, cfg)
            bits = np.concatenate([to_bits(flat, w), to_bits(neg_shares(m, cfg), w),
                                   to_bits(neg_shares(rb, cfg), w)], axis=1)
            run_circuit(sess, c, n, bits)
            out, deriv = m, rb
        else:
            res = run_circuit(sess, c, n, to_bits(flat, w))
            out, deriv = from_bits(res[:, :w]), from_bits(res[:, w:])
    return ReluArtifacts(out.reshape(shape), deriv.reshape(shape))


def _compare(x, y, sess, name: str) -> np.ndarray:
    """Public bits [x > y] from one 1-bit-output circuit per pair."""
    cfg = sess.cfg
    d = sub_shares(x, y, cfg) if sess.party == 0 else sub_shares(y, x, cfg)
    n = d.size
    with sess.measure(name, n):
        res = run_circuit(sess, cmp_circuit(cfg.l), n, to_bits(d.reshape(-1), cfg.l))
    return res[:, 0].reshape(d.shape)


def secure_pair_max(x, y, sess) -> MaxArtifacts:
    """Elementwise max of two shared tensors; ties select ``y``."""
    x = np.asarray(x, dtype=U64)
    y = np.asarray(y, dtype=U64)
    if x.shape != y.shape:
        raise ConfigError(f"pair-max shape mismatch {x.shape} vs {y.shape}")
    if x.size == 0:
        return MaxArtifacts(x.copy(), np.zeros(x.shape, dtype=bool))
    bit = _compare(x, y, sess, "max")
    return MaxArtifacts(np.where(bit, x, y), bit)


def _windows(x):
    if x.ndim < 2 or x.shape[-1] % 2 or x.shape[-2] % 2:
        raise ConfigError(f"max-pooling needs even spatial dims, got {x.shape}")
    return x[..., 0::2, 0::2], x[..., 0::2, 1::2], x[..., 1::2, 0::2], x[..., 1::2, 1::2]


def secure_maxpool(x, sess) -> tuple[np.ndarray, np.ndarray]:
    """2x2 / stride-2 max-pooling as a three-comparison tournament.

    Returns the pooled shares and the public selection bits (..., H/2, W/2, 3):
    [a > b], [c > d] and [max(a, b) > max(c, d)].
    """
    x = np.asarray(x, dtype=U64)
    a, b, c, d = _windows(x)
    with sess.measure("maxpool", a.size):
        first = _compare(np.stack([a, c]), np.stack([b, d]), sess, "maxpool_cmp")
        m = np.where(first, np.stack([a, c]), np.stack([b, d]))
        top = _compare(m[0], m[1], sess, "maxpool_cmp")
    out = np.where(top, m[0], m[1])
    return out, np.stack([first[0], first[1], top], axis=-1)


def winner_index(bits: np.ndarray) -> np.ndarray:
    """Window position (0..3 for a, b, c, d) picked by the tournament bits."""
    bits = np.asarray(bits, dtype=bool)
    return np.where(bits[..., 2], np.where(bits[..., 0], 0, 1), np.where(bits[..., 1], 2, 3))


def maxpool_backward(g, bits) -> np.ndarray:
    """Route each window's gradient to its winner; purely local since bits are public."""
    g = np.asarray(g)
    win = winner_index(bits)
    if win.shape != g.shape:
        raise ConfigError(f"gradient shape {g.shape} does not match selection bits {win.shape}")
    out = np.zeros(g.shape[:-2] + (2 * g.shape[-2], 2 * g.shape[-1]), dtype=g.dtype)
    for k, (i, j) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
        out[..., i::2, j::2] = np.where(win == k, g, np.zeros_like(g))
    return out
