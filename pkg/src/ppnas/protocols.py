"""Secure sub-protocols over additive shares and their backward passes.

ReLU, pair-max and max-pooling run as garbled circuits (see
:mod:`ppnas.primitives`).  The Softmax surrogate replaces exp(x) by a power
function: with u = (L + x) / e^L,

    hat_exp(x) = u^L = H * (1 + x/L)^L,   H = (L / e^L)^L,

and H cancels under normalization.  Because H drops below fixed-point
resolution already for small L, the secure path works with the H-free factor
(1 + x/L)^L; ``hat_exp_local`` keeps the H-scaled form for cleartext use.

The composite algorithms accept either a protocol session or a
:class:`ppnas.backend.Backend`, so the very same code drives the
fixed-point mirror and real-arithmetic oracles.

Leakage notes.  Max-pooling and pair-max reveal the comparison bit to both
servers (the argmax pattern).  The Softmax re-share reveals c - r to party 1
with r drawn from [0, 2^m) ring units, i.e. the clipped logits up to m
low-order bits; this is what makes local powers of a share meaningful.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ppnas.backend import Backend, as_backend, power_factor
from ppnas.errors import ConfigError, FixedPointOverflow, NumericError
from ppnas.primitives import (
    MaxArtifacts,
    ReluArtifacts,
    maxpool_backward,
    secure_maxpool,
    secure_pair_max,
    secure_relu,
    winner_index,
)
from ppnas.ring import DEFAULT, FixedPointConfig

# scale offset used for exp(z) = (exp(z/64))^64 so z/64 is never truncated
_EXP_SQUARINGS = 6


@dataclass(frozen=True)
class SoftmaxConfig:
    """Softmax surrogate parameters.

    ``L`` is the exponent (a power of two 2^k in the usual setting, any
    positive integer accepted).  ``B`` bounds the pre-scaled denominator
    (None: derived from n and L).  ``iterations`` is the minimum Newton count;
    it is raised automatically when B needs more.  ``literal`` switches
    :func:`hat_exp_local` to the additive-term-free form (x / e^L)^L.
    """

    L: int = 4
    iterations: int = 12
    B: int | None = None
    x_max: float = 16.0
    mask_bits: int = 8
    literal: bool = False

    def __post_init__(self):
        if self.L < 1:
            raise ConfigError(f"Softmax exponent L={self.L} must be >= 1")
        if self.iterations < 1:
            raise ConfigError("reciprocal iterations must be >= 1")
        if self.x_max <= 0:
            raise ConfigError("x_max must be positive")

    @property
    def H(self) -> float:
        return (self.L / math.e ** self.L) ** self.L


def _pow_int(u: np.ndarray, L: int) -> np.ndarray:
    if L & (L - 1) == 0:
        out = u
        for _ in range(L.bit_length() - 1):
            out = out * out
        return out
    return u ** L


def hat_exp_local(x, cfg: SoftmaxConfig = SoftmaxConfig(), fp: FixedPointConfig | None = None,
                  normalized: bool = False) -> np.ndarray:
    """((L + x) / e^L)^L on a cleartext value or one party's decoded share.

    ``normalized`` divides out H, giving (1 + x/L)^L.  With ``fp`` the result is
    checked against the fixed-point range and FixedPointOverflow is raised when
    it cannot be represented (too large, or a positive value that rounds to 0).
    """
    x = np.asarray(x, dtype=np.float64)
    L = cfg.L
    if cfg.literal:
        u = x / math.e ** L
        if normalized:
            u = x / L
    else:
        u = (L + x) / (L if normalized else math.e ** L)
        if np.any(u <= 0):
            raise NumericError(f"hat_exp base (L + x) not positive for min x = {np.min(x):.4g}")
    out = _pow_int(u, L)
    if fp is not None:
        if not np.all(np.isfinite(out)) or np.any(np.abs(out) >= fp.bound):
            raise FixedPointOverflow(f"hat_exp value {np.max(np.abs(out)):.4g} exceeds fixed-point range "
                                     f"{fp.bound:g} (L={L})")
        if np.any((out > 0) & (out * fp.scale < 0.5)):
            raise FixedPointOverflow(f"hat_exp value {np.min(out):.3g} below fixed-point resolution 2^-{fp.f} (L={L})")
    return out


# ---------------------------------------------------------------------------
# Reciprocal


@dataclass(frozen=True)
class ReciprocalPlan:
    """Public pre-scaling: d' = d / 2^s lies in [1/2, 2^Bd]; y kept at scale F.

    U is the scale of the correction factor (2 - d'y); F + U stays near 40 bits
    so the Newton products are far from the ring boundary.
    """

    s: int
    Bd: int
    F: int
    iterations: int
    U: int = 16


def reciprocal_plan(lo: float, hi: float, f: int, iterations: int = 12) -> ReciprocalPlan:
    if not (0 < lo <= hi):
        raise NumericError(f"reciprocal needs 0 < lo <= hi, got [{lo}, {hi}]")
    s = math.floor(math.log2(lo)) + 1
    Bd = max(1, math.ceil(math.log2(hi / 2.0 ** s)))
    F = max(f, Bd + 12)
    return ReciprocalPlan(s, Bd, F, max(iterations, Bd + 5), max(12, min(20, 40 - F)))


def _reciprocal_core(be: Backend, d, plan: ReciprocalPlan):
    """Newton y <- y (2 - d y) on d' = d / 2^s from y0 = 2^-Bd; returns y at scale F."""
    f, F, U = be.f, plan.F, plan.U
    dd = be.shift(d, 0, plan.s)
    shape = np.shape(dd)
    y0 = 2.0 ** -plan.Bd
    two = be.const(np.full(shape, 2.0), U)
    y = None
    for _ in range(plan.iterations):
        if y is None:  # the public start value makes the first step local
            t = be.mul_const(dd, y0, shift=f + F - U, c_scale=F)
            y = be.mul_const(be.sub(two, t), y0, shift=U, c_scale=F)
        else:
            t = be.mul(dd, y, shift=f + F - U)
            y = be.mul(y, be.sub(two, t), shift=U)
    return y


def secure_reciprocal(d, cfg: SoftmaxConfig = SoftmaxConfig(L=1, B=6), sess=None, *,
                      lo: float = 0.5, hi: float | None = None):
    """Shares of 1/d at scale f for decoded d in [lo, hi] (default [1/2, 2^B])."""
    be = as_backend(sess)
    if hi is None:
        hi = 2.0 ** (cfg.B if cfg.B is not None else 6)
    plan = reciprocal_plan(lo, hi, be.f, cfg.iterations)
    with be.measure("reciprocal", int(np.size(d))):
        y = _reciprocal_core(be, d, plan)
        return be.shift(y, plan.F - be.f, plan.s)


# ---------------------------------------------------------------------------
# Softmax


@dataclass
class SoftmaxArtifacts:
    """Forward state kept for the backward pass (all shares)."""

    p: object
    c: object          # ReLU-then-clip input, scale f
    ind: object        # integer indicator d(c)/dx in {0, 1}
    g: object = field(repr=False, default=None)
    cfg: SoftmaxConfig = field(default_factory=SoftmaxConfig)


def softmax_bounds(n: int, cfg: SoftmaxConfig, fp: FixedPointConfig = DEFAULT) -> tuple[float, float]:
    """Public bounds on the sum of n H-free power factors after clipping and masking."""
    mask = 2.0 ** (cfg.mask_bits - fp.f)
    lo = n * 0.5
    hi = n * float(power_factor(cfg.x_max + 2 * mask, cfg.L)) * float(power_factor(mask, cfg.L)) * 1.01
    if cfg.B is not None:
        hi = min(hi, 2.0 ** cfg.B * 2.0 ** (math.floor(math.log2(lo)) + 1))
    return lo, hi


def softmax_forward(x, cfg: SoftmaxConfig = SoftmaxConfig(), sess=None) -> SoftmaxArtifacts:
    """Approximate Softmax over the last axis, keeping backward artifacts.

    Steps: ReLU and clip at x_max in one circuit; bounded-mask re-share; local (1 + v/L)^L per
    party; one multiplication to join the factors; sum; Newton reciprocal;
    one multiplication per element.
    """
    be = as_backend(sess)
    n = np.shape(x)[-1]
    if n < 2:
        raise ConfigError("Softmax needs at least two entries")
    rows = int(np.prod(np.shape(x)[:-1], dtype=np.int64))
    lo, hi = softmax_bounds(n, cfg, be.cfg)
    plan = reciprocal_plan(lo, hi, be.f, cfg.iterations)
    if plan.F + be.f + plan.s + 2 > be.cfg.l - 1:
        raise NumericError(f"ring too narrow for Softmax normalisation (needs {plan.F + be.f + plan.s + 3} bits)")
    with be.measure("softmax", rows):
        c, ind = be.clip(x, cfg.x_max)
        g = be.power_factors(c, cfg.L, cfg.mask_bits)
        total = be.sum(g, axis=-1, keepdims=True)
        y = _reciprocal_core(be, total, plan)
        yb = np.broadcast_to(y, np.shape(g))
        p = be.mul(g, yb, shift=plan.F, v=plan.s)
    return SoftmaxArtifacts(p=p, c=c, ind=ind, g=g, cfg=cfg)


def approx_softmax(x, cfg: SoftmaxConfig = SoftmaxConfig(), sess=None):
    """Shares of the approximate Softmax probabilities over the last axis."""
    return softmax_forward(x, cfg, sess).p


def _power_derivative_ratio(be: Backend, c, cfg: SoftmaxConfig):
    """L / (L + c) at scale f, via the secure reciprocal on [L, L + x_max]."""
    plan = reciprocal_plan(cfg.L, cfg.L + cfg.x_max + 1.0, be.f, cfg.iterations)
    y = _reciprocal_core(be, be.add_const(c, float(cfg.L)), plan)
    return be.shift(be.mul_int(y, np.full(np.shape(y), cfg.L, dtype=np.int64)), plan.F - be.f, plan.s)


def softmax_backward(gp, art: SoftmaxArtifacts, sess=None):
    """Gradient w.r.t. the Softmax input given upstream gradient ``gp`` on p.

    dx_j = p_j (gp_j - sum_i gp_i p_i) * L / (L + c_j) * [0 < x_j < x_max].
    """
    be = as_backend(sess)
    with be.measure("softmax_backward", int(np.prod(np.shape(gp)[:-1], dtype=np.int64))):
        q = be.mul(gp, art.p)
        s = be.sum(q, axis=-1, keepdims=True)
        w = be.mul(art.p, be.sub(gp, np.broadcast_to(s, np.shape(gp))))
        k = _power_derivative_ratio(be, art.c, art.cfg)
        return be.mul(be.mul(w, k), art.ind, shift=0)


def softmax_ce_backward(p_or_art, y, art: SoftmaxArtifacts | None = None, cfg: SoftmaxConfig | None = None,
                        sess=None):
    """Cross-entropy gradient through the surrogate: (p - y) * L / (L + c) * indicator.

    Accepts ``(art, y, sess=...)`` or ``(p, y, art, cfg, sess)``.
    """
    if isinstance(p_or_art, SoftmaxArtifacts):
        art = p_or_art
    if art is None:
        raise ConfigError("softmax_ce_backward needs the forward artifacts")
    be = as_backend(sess)
    with be.measure("softmax_ce_backward", int(np.prod(np.shape(art.p)[:-1], dtype=np.int64))):
        k = _power_derivative_ratio(be, art.c, cfg or art.cfg)
        dc = be.mul(be.sub(art.p, y), k)
        return be.mul(dc, art.ind, shift=0)


def relu_backward(g, art, sess=None):
    """g * [x > 0] via one multiplication with the derivative shares (no truncation)."""
    be = as_backend(sess)
    deriv = art.derivative if isinstance(art, ReluArtifacts) else art
    return be.mul(g, deriv, shift=0)


# ---------------------------------------------------------------------------
# Logarithm and cross-entropy


def secure_exp_neg(be: Backend, y):
    """exp(-y) at scale f + 6 for y in about [-0.7, 10]: 4th-order Taylor of -y/64, then 6 squarings."""
    S = be.f + _EXP_SQUARINGS
    t = be.shift(be.neg(y), -_EXP_SQUARINGS, _EXP_SQUARINGS)  # -y/64 at scale S, encoding untouched
    t2 = be.mul(t, t, shift=S)
    t3 = be.mul(t2, t, shift=S)
    t4 = be.mul(t2, t2, shift=S)
    e = be.add_const(t, 1.0, S)
    e = be.add(e, be.shift(t2, 0, 1))
    e = be.add(e, be.mul_const(t3, 1.0 / 6.0, 20))
    e = be.add(e, be.mul_const(t4, 1.0 / 24.0, 20))
    for _ in range(_EXP_SQUARINGS):
        e = be.mul(e, e, shift=S)
    return e


def secure_log(v, sess=None, *, vmax: float, iterations: int = 16):
    """log(v) at scale f for decoded v in [1/2, vmax].

    Newton on v * exp(-y) = 1 started above the root at y0 = log(vmax); the
    iterates decrease monotonically, so exp(-y) <= 2 and products stay small.
    """
    be = as_backend(sess)
    S = be.f + _EXP_SQUARINGS
    y = be.const(np.full(np.shape(v), math.log(vmax * 1.05)))
    with be.measure("log", int(np.size(v))):
        for _ in range(iterations):
            h = be.mul(v, secure_exp_neg(be, y), shift=S)
            y = be.add_const(be.add(y, h), -1.0)
    return y


P_MIN = 1e-4
_LOG_LIFT = 14  # log p = log(p * 2^14) - 14 ln 2 keeps the Newton argument >= 1


def cross_entropy_loss(p, y, sess=None, *, per_sample: bool = False):
    """Mean over the batch of -sum_k y_k log p_k for one-hot y (shares at scale f).

    Uses -log(sum_k y_k p_k) per sample with p clamped to [1e-4, 1].
    """
    be = as_backend(sess)
    py = be.sum(be.mul(p, y), axis=-1)
    over, _ = be.relu(be.add_const(py, -P_MIN))
    pc = be.add_const(over, P_MIN)
    lifted = be.shift(pc, 0, -_LOG_LIFT)
    logp = be.add_const(secure_log(lifted, be, vmax=2.0 ** _LOG_LIFT * 1.1), -_LOG_LIFT * math.log(2.0))
    losses = be.neg(logp)
    if per_sample:
        return losses
    n = np.shape(losses)[0] if np.ndim(losses) else 1
    return be.mul_const(be.sum(losses), 1.0 / n)


__all__ = [
    "MaxArtifacts", "ReluArtifacts", "ReciprocalPlan", "SoftmaxArtifacts", "SoftmaxConfig", "approx_softmax",
    "cross_entropy_loss", "hat_exp_local", "maxpool_backward", "reciprocal_plan", "relu_backward",
    "secure_exp_neg", "secure_log", "secure_maxpool", "secure_pair_max", "secure_reciprocal", "secure_relu",
    "softmax_backward", "softmax_bounds", "softmax_ce_backward", "softmax_forward", "winner_index",
]
