"""Differentiable architecture search over a super-net of mixed units.

Every layer maps (B, side*side) to (B, side*side) as a weighted sum of M
candidate units; the weights are the approximate Softmax of one row of the
architecture matrix alpha (N x M).  A two-layer FC head with a Softmax
output closes the net.  All arithmetic goes through a
:class:`~ppnas.backend.Backend`, so the very same code runs on secret shares,
on the fixed-point mirror and in real arithmetic.

Search loop per batch (first-order bilevel): one SGD step on W with a
training batch, then one step on alpha with a validation batch evaluated at
the updated W.  Both steps scale the summed batch gradient by eta / |B|.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable

import numpy as np

from ppnas.backend import Backend, MirrorBackend, RealBackend, as_backend
from ppnas.errors import ConfigError, FormatError, MPCError, ProtocolError
from ppnas.protocols import (
    SoftmaxConfig,
    cross_entropy_loss,
    relu_backward,
    softmax_backward,
    softmax_ce_backward,
    softmax_forward,
)
from ppnas.ring import DEFAULT, U64, FixedPointConfig, encode, make_shares, to_signed, wrap
from ppnas.runtime import Kind

LR_SCALE = 24          # fractional bits used to encode eta / |B|
HEAD_BIAS = 2.0        # keeps initial logits inside the Softmax clip window
SHUFFLE_STREAM = 0x73687566


class UnitKind(str, Enum):
    CONV3X3 = "conv3x3"
    CONV5X5 = "conv5x5"
    FULLY_CONNECTED = "fc"
    MAXPOOL2X2 = "maxpool2x2"
    IDENTITY = "identity"

    @property
    def kernel(self) -> int:
        return {"conv3x3": 3, "conv5x5": 5}.get(self.value, 0)


DEFAULT_UNITS = (UnitKind.CONV3X3, UnitKind.FULLY_CONNECTED, UnitKind.IDENTITY)


class LossKind(str, Enum):
    ARCH = "L_A"      # cross-entropy on the validation split
    WEIGHT = "L_W"    # cross-entropy on the training split


@dataclass(frozen=True)
class SuperNet:
    """Shape description; the weights live in :class:`NetState`."""

    N: int = 2
    units: tuple[UnitKind, ...] = DEFAULT_UNITS
    side: int = 14
    hidden: int = 32
    classes: int = 2

    def __post_init__(self):
        object.__setattr__(self, "units", tuple(UnitKind(u) for u in self.units))
        if self.N < 1 or not self.units:
            raise ConfigError("super-net needs N >= 1 layers and at least one unit")
        if self.classes < 2:
            raise ConfigError("need at least two classes")
        if UnitKind.MAXPOOL2X2 in self.units and self.side % 2:
            raise ConfigError("max-pool unit needs an even input side")

    @property
    def M(self) -> int:
        return len(self.units)

    @property
    def features(self) -> int:
        return self.side * self.side

    def weight_shapes(self) -> dict[str, tuple[int, ...]]:
        F = self.features
        shapes: dict[str, tuple[int, ...]] = {}
        for i in range(self.N):
            for j, u in enumerate(self.units):
                if u.kernel:
                    shapes[f"l{i}.u{j}.w"] = (u.kernel * u.kernel, 1)
                    shapes[f"l{i}.u{j}.b"] = (1,)
                elif u is UnitKind.FULLY_CONNECTED:
                    shapes[f"l{i}.u{j}.w"] = (F, F)
                    shapes[f"l{i}.u{j}.b"] = (F,)
        shapes["head.w1"] = (F, self.hidden)
        shapes["head.b1"] = (self.hidden,)
        shapes["head.w2"] = (self.hidden, self.classes)
        shapes["head.b2"] = (self.classes,)
        return shapes

    def describe(self) -> dict:
        return {"N": self.N, "units": [u.value for u in self.units], "side": self.side,
                "hidden": self.hidden, "classes": self.classes}


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 3
    eta_A: float = 1.0
    eta_W: float = 0.5
    batch_size: int = 128
    L: int = 4
    seed: int = 0
    alpha_init: float = 1.0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.L < 1:
            raise ConfigError(f"invalid training config {self}")
        if self.eta_A < 0 or self.eta_W < 0:
            raise ConfigError("learning rates must be non-negative")

    @property
    def softmax(self) -> SoftmaxConfig:
        return SoftmaxConfig(L=self.L)


@dataclass
class ArchParams:
    alpha: object   # backend value, shape (N, M)


@dataclass
class NetState:
    W: dict[str, object]
    arch: ArchParams

    @property
    def alpha(self):
        return self.arch.alpha


# ---------------------------------------------------------------------------
# Initialization and provisioning


def init_params(net: SuperNet, cfg: TrainConfig) -> dict[str, np.ndarray]:
    """Cleartext initial weights and alpha, as the dealer would draw them."""
    rng = np.random.default_rng([cfg.seed & (2**64 - 1), 0x696E6974])
    out: dict[str, np.ndarray] = {}
    for name, shape in net.weight_shapes().items():
        if name.endswith(".b") or name.startswith("head.b"):
            out[name] = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(shape[0])
            out[name] = rng.uniform(-bound, bound, size=shape)
    out["head.b2"] = np.full(net.classes, HEAD_BIAS)
    out["alpha"] = np.full((net.N, net.M), cfg.alpha_init)
    return out


@dataclass
class SearchData:
    """Training and validation tensors in backend form: x (n, F), y one-hot (n, K)."""

    x_train: object
    y_train: object
    x_val: object
    y_val: object

    @property
    def n_train(self) -> int:
        return int(np.shape(self.x_train)[0])

    @property
    def n_val(self) -> int:
        return int(np.shape(self.x_val)[0])


def split_dataset(x: np.ndarray, y: np.ndarray, seed: int) -> dict[str, np.ndarray]:
    """Shuffle once under ``seed`` and split 50/50 into train and validation."""
    perm = np.random.default_rng([seed & (2**64 - 1), 0x73706C74]).permutation(len(x))
    half = len(x) // 2
    tr, va = perm[:half], perm[half:2 * half]
    return {"x_train": x[tr], "y_train": y[tr], "x_val": x[va], "y_val": y[va]}


def load_state(be: Backend, values: dict[str, np.ndarray]) -> tuple[NetState, SearchData | None]:
    """Wrap cleartext (mirror/real) or per-party share arrays as backend values."""
    conv = (lambda v: np.asarray(v)) if be.kind == "secure" else (
        be.encode if isinstance(be, MirrorBackend) else (lambda v: np.asarray(v, dtype=np.float64)))
    W = {k: conv(v) for k, v in values.items() if k.startswith(("l", "head."))}
    state = NetState(W, ArchParams(conv(values["alpha"])))
    data = None
    if "x_train" in values:
        data = SearchData(*(conv(values[k]) for k in ("x_train", "y_train", "x_val", "y_val")))
    return state, data


def share_values(values: dict[str, np.ndarray], seed: int, cfg: FixedPointConfig = DEFAULT):
    """Dealer / data-provider side: encode and split every tensor into two share dicts."""
    rng = np.random.default_rng([seed & (2**64 - 1), 0x73686172])
    s0, s1 = {}, {}
    for k in sorted(values):
        s0[k], s1[k] = make_shares(encode(values[k], cfg), rng, cfg)
    return s0, s1


# ---------------------------------------------------------------------------
# Units


def im2col(x, side: int, k: int) -> np.ndarray:
    """(B, side*side) -> (B*side*side, k*k) patches with zero 'same' padding."""
    B, r = np.shape(x)[0], k // 2
    x = np.asarray(x)
    pad = np.zeros((B, side + 2 * r, side + 2 * r), dtype=x.dtype)
    pad[:, r:r + side, r:r + side] = x.reshape(B, side, side)
    cols = np.lib.stride_tricks.sliding_window_view(pad, (k, k), axis=(1, 2))
    return np.ascontiguousarray(cols).reshape(B * side * side, k * k)


def col2im(be: Backend, cols, B: int, side: int, k: int):
    """Adjoint of :func:`im2col` (sums overlapping patch gradients)."""
    r = k // 2
    c = np.asarray(cols).reshape(B, side, side, k, k)
    pad = np.zeros((B, side + 2 * r, side + 2 * r), dtype=c.dtype)
    for di in range(k):
        for dj in range(k):
            pad[:, di:di + side, dj:dj + side] += c[:, :, :, di, dj]
    return be.fix(pad[:, r:r + side, r:r + side].reshape(B, side * side))


def _upsample(x):
    return np.repeat(np.repeat(np.asarray(x), 2, axis=-2), 2, axis=-1)


def unit_forward(be: Backend, kind: UnitKind, W: dict, prefix: str, x, side: int):
    """One candidate unit; returns (output (B, F), cache for the backward pass)."""
    B = np.shape(x)[0]
    if kind is UnitKind.IDENTITY:
        return x, None
    if kind is UnitKind.MAXPOOL2X2:
        pooled, bits = be.maxpool(np.asarray(x).reshape(B, side, side))
        return _upsample(pooled).reshape(B, side * side), bits
    if kind is UnitKind.FULLY_CONNECTED:
        z = be.add(be.matmul(x, W[prefix + "w"]), W[prefix + "b"])
        out, d = be.relu(z)
        return out, (x, d)
    cols = im2col(x, side, kind.kernel)
    z = be.matmul(cols, W[prefix + "w"]).reshape(B, side * side)
    z = be.add(z, W[prefix + "b"])
    out, d = be.relu(z)
    return out, (cols, d)


def unit_backward(be: Backend, kind: UnitKind, W: dict, prefix: str, cache, g, side: int, grads: dict | None):
    """Input gradient of one unit; weight gradients go into ``grads`` when given."""
    B = np.shape(g)[0]
    if kind is UnitKind.IDENTITY:
        return g
    if kind is UnitKind.MAXPOOL2X2:
        g4 = np.asarray(g).reshape(B, side // 2, 2, side // 2, 2)
        gp = be.sum(be.sum(g4, axis=4), axis=2)
        return be.maxpool_backward(gp, cache).reshape(B, side * side)
    inp, d = cache
    dz = relu_backward(g, d, be)
    if kind is UnitKind.FULLY_CONNECTED:
        if grads is not None:
            grads[prefix + "w"] = be.matmul(np.swapaxes(inp, 0, 1), dz)
            grads[prefix + "b"] = be.sum(dz, axis=0)
        return be.matmul(dz, np.swapaxes(W[prefix + "w"], 0, 1))
    k = kind.kernel
    dzc = np.asarray(dz).reshape(B * side * side, 1)
    if grads is not None:
        grads[prefix + "w"] = be.matmul(np.swapaxes(inp, 0, 1), dzc)
        grads[prefix + "b"] = be.sum(dz).reshape(1)
    dcols = be.matmul(dzc, np.asarray(W[prefix + "w"]).reshape(1, k * k))
    return col2im(be, dcols, B, side, k)


# ---------------------------------------------------------------------------
# Mixed layers and the full net


@dataclass
class ForwardCache:
    mix: object                         # SoftmaxArtifacts of alpha (N, M)
    layers: list = field(default_factory=list)
    head: tuple = ()
    out: object = None                  # SoftmaxArtifacts of the logits


def mixed_layer_forward(be: Backend, net: SuperNet, W: dict, p_row, x, layer: int):
    """sum_j p_j * unit_j(x) for one layer; ``p_row`` holds the mixing weights (M,)."""
    outs, caches = [], []
    for j, kind in enumerate(net.units):
        o, c = unit_forward(be, kind, W, f"l{layer}.u{j}.", x, net.side)
        outs.append(np.asarray(o))
        caches.append(c)
    U = np.stack(outs)
    y = be.sum(be.mul(np.asarray(p_row).reshape(net.M, 1, 1), U), axis=0)
    return y, (U, caches)


def mixed_layer_backward(be: Backend, net: SuperNet, W: dict, p_row, cache, g, layer: int, grads: dict | None):
    """Returns (dx, dp (M,))."""
    U, caches = cache
    g1 = np.asarray(g)[None]
    dU = be.mul(np.asarray(p_row).reshape(net.M, 1, 1), g1)
    dp = be.sum(be.mul(g1, U), axis=(1, 2))
    dx = None
    for j, kind in enumerate(net.units):
        d = unit_backward(be, kind, W, f"l{layer}.u{j}.", caches[j], np.asarray(dU)[j], net.side, grads)
        dx = d if dx is None else be.add(dx, d)
    return dx, dp


def supernet_forward(be: Backend, net: SuperNet, state: NetState, x, smx: SoftmaxConfig = SoftmaxConfig()):
    """Class probabilities (B, K) and the cache for :func:`supernet_backward`."""
    W = state.W
    mix = softmax_forward(state.alpha, smx, be)
    cache = ForwardCache(mix=mix)
    h = x
    for i in range(net.N):
        h, c = mixed_layer_forward(be, net, W, np.asarray(mix.p)[i], h, i)
        cache.layers.append(c)
    z1 = be.add(be.matmul(h, W["head.w1"]), W["head.b1"])
    a1, d1 = be.relu(z1)
    logits = be.add(be.matmul(a1, W["head.w2"]), W["head.b2"])
    cache.head = (h, a1, d1)
    cache.out = softmax_forward(logits, smx, be)
    return cache.out.p, cache


def supernet_backward(be: Backend, net: SuperNet, state: NetState, cache: ForwardCache, y, *,
                      weights: bool = True, arch: bool = True):
    """Gradients of the summed batch cross-entropy: (dict of W grads, dalpha)."""
    W = state.W
    grads: dict | None = {} if weights else None
    h, a1, d1 = cache.head
    dlogits = softmax_ce_backward(cache.out, y, sess=be)
    if weights:
        grads["head.w2"] = be.matmul(np.swapaxes(a1, 0, 1), dlogits)
        grads["head.b2"] = be.sum(dlogits, axis=0)
    da1 = be.matmul(dlogits, np.swapaxes(W["head.w2"], 0, 1))
    dz1 = relu_backward(da1, d1, be)
    if weights:
        grads["head.w1"] = be.matmul(np.swapaxes(h, 0, 1), dz1)
        grads["head.b1"] = be.sum(dz1, axis=0)
    if not (weights or arch):
        return grads, None
    g = be.matmul(dz1, np.swapaxes(W["head.w1"], 0, 1))
    dps = [None] * net.N
    P = np.asarray(cache.mix.p)
    for i in reversed(range(net.N)):
        need_dx = i > 0
        g_next, dps[i] = mixed_layer_backward(be, net, W, P[i], cache.layers[i], g, i, grads)
        if need_dx:
            g = g_next
    dalpha = softmax_backward(np.stack([np.asarray(d) for d in dps]), cache.mix, be) if arch else None
    return grads, dalpha


def sgd_step(be: Backend, value, grad, lr: float):
    """value - lr * grad with lr encoded at LR_SCALE fractional bits; share-local for shares."""
    return be.sub(value, be.mul_const(grad, lr, shift=LR_SCALE, c_scale=LR_SCALE))


def update_weights(be: Backend, net: SuperNet, state: NetState, x, y, cfg: TrainConfig, *, with_loss: bool = True):
    """One SGD step on W from a training batch; returns the batch L_W (shares) or None."""
    p, cache = supernet_forward(be, net, state, x, cfg.softmax)
    loss = cross_entropy_loss(p, y, be) if with_loss else None
    grads, _ = supernet_backward(be, net, state, cache, y, weights=True, arch=False)
    lr = cfg.eta_W / np.shape(x)[0]
    for k, gk in grads.items():
        state.W[k] = sgd_step(be, state.W[k], gk, lr)
    return loss


def update_arch(be: Backend, net: SuperNet, state: NetState, x, y, cfg: TrainConfig, *, with_loss: bool = False):
    """One step on alpha from a validation batch at the current (already updated) W."""
    p, cache = supernet_forward(be, net, state, x, cfg.softmax)
    loss = cross_entropy_loss(p, y, be) if with_loss else None
    _, dalpha = supernet_backward(be, net, state, cache, y, weights=False, arch=True)
    state.arch.alpha = sgd_step(be, state.alpha, dalpha, cfg.eta_A / np.shape(x)[0])
    return loss


# ---------------------------------------------------------------------------
# Search loop


@dataclass
class EpochRecord:
    epoch: int
    loss_w: object      # mean batch L_W over the epoch (backend value)
    loss_a: object      # mean batch L_A
    batches: int


@dataclass
class SearchResult:
    arch: ArchParams
    state: NetState
    history: list[EpochRecord]


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    """Public batch order shared by both servers (and the oracle)."""
    return np.random.default_rng([seed & (2**64 - 1), SHUFFLE_STREAM, epoch]).permutation(n)


def pp_nas_search(data: SearchData, net: SuperNet, state: NetState, cfg: TrainConfig, sess, *,
                  start_epoch: int = 0, checkpoint: str | Path | None = None,
                  on_epoch: Callable[[int, NetState, EpochRecord], None] | None = None) -> SearchResult:
    """Bilevel search loop; ``sess`` is a Session or any Backend.

    Losses are kept as backend values (shares on the secure path).  When a
    checkpoint path is given the state is written after each epoch and on an
    aborting error.
    """
    be = as_backend(sess)
    B = cfg.batch_size
    n_batches = min(data.n_train, data.n_val) // B
    history: list[EpochRecord] = []
    done = start_epoch
    try:
        for epoch in range(start_epoch, cfg.epochs):
            tr = epoch_order(data.n_train, cfg.seed, 2 * epoch)
            va = epoch_order(data.n_val, cfg.seed, 2 * epoch + 1)
            lw = la = None
            for b in range(n_batches):
                it, iv = tr[b * B:(b + 1) * B], va[b * B:(b + 1) * B]
                xw, yw = np.asarray(data.x_train)[it], np.asarray(data.y_train)[it]
                xa, ya = np.asarray(data.x_val)[iv], np.asarray(data.y_val)[iv]
                with be.measure("nas_weight_step"):
                    l1 = update_weights(be, net, state, xw, yw, cfg)
                with be.measure("nas_arch_step"):
                    l2 = update_arch(be, net, state, xa, ya, cfg, with_loss=True)
                lw = l1 if lw is None else be.add(lw, l1)
                la = l2 if la is None else be.add(la, l2)
            if n_batches:
                lw, la = be.mul_const(lw, 1.0 / n_batches), be.mul_const(la, 1.0 / n_batches)
            rec = EpochRecord(epoch, lw, la, n_batches)
            history.append(rec)
            done = epoch + 1
            if checkpoint is not None:
                save_checkpoint(checkpoint, be, net, cfg, state, done)
            if on_epoch is not None:
                on_epoch(epoch, state, rec)
    except MPCError:
        if checkpoint is not None:
            save_checkpoint(checkpoint, be, net, cfg, state, done, aborted=True)
        raise
    return SearchResult(state.arch, state, history)


def reveal_losses(sess, history: list[EpochRecord]) -> list[tuple[float, float]]:
    """Per-epoch (L_W, L_A); on shares this needs the session test flag."""
    be = as_backend(sess)
    return [(float(be.reveal(r.loss_w, "test")), float(be.reveal(r.loss_a, "test"))) for r in history]


def argmax_units(alpha: np.ndarray) -> list[int]:
    """Per-row arg max; np.argmax already returns the lowest index on ties."""
    return [int(i) for i in np.argmax(np.asarray(alpha), axis=1)]


@dataclass
class Architecture:
    units: list[UnitKind]
    indices: list[int]
    alpha: np.ndarray

    def to_json(self) -> dict:
        return {"units": [u.value for u in self.units], "indices": self.indices, "alpha": self.alpha.tolist()}


def derive_architecture(arch: ArchParams, net: SuperNet, sess, *, joint: bool = False) -> Architecture:
    """Jointly reconstruct alpha and pick one unit per layer.

    ``joint=True`` is the explicit consent of the calling server; on the
    secure path both servers confirm over the wire before alpha is opened.
    """
    if not joint:
        raise ProtocolError("derive_architecture needs an explicit joint call from both servers")
    be = as_backend(sess)
    if be.kind == "secure":
        peer = be.sess.exchange(Kind.CONTROL, b"derive_architecture")
        if peer != b"derive_architecture":
            raise ProtocolError("peer did not consent to revealing the architecture")
    alpha = be.reveal(arch.alpha, "derive_architecture")
    idx = argmax_units(alpha)
    return Architecture([net.units[i] for i in idx], idx, np.asarray(alpha))


# ---------------------------------------------------------------------------
# Checkpoints: "PPNA" | u16 version | u32 epoch | u8 aborted | u32 json length | json | arrays


CKPT_MAGIC = b"PPNA"
CKPT_VERSION = 1


def _raw(be: Backend, v) -> np.ndarray:
    if be.kind == "real":
        return np.asarray(v, dtype=np.float64).view("<u8")
    return wrap(np.asarray(v).astype(np.int64).astype(U64) if be.kind == "mirror" else np.asarray(v, dtype=U64),
                be.cfg)


def _unraw(be: Backend, raw: np.ndarray):
    if be.kind == "real":
        return raw.view("<f8").astype(np.float64)
    return to_signed(raw, be.cfg) if be.kind == "mirror" else raw.astype(U64)


def config_digest(net: SuperNet, cfg: TrainConfig, fp: FixedPointConfig) -> str:
    echo = {"net": net.describe(), "train": asdict(cfg), "l": fp.l, "f": fp.f}
    return hashlib.sha256(json.dumps(echo, sort_keys=True).encode()).hexdigest()


def save_checkpoint(path, be: Backend, net: SuperNet, cfg: TrainConfig, state: NetState, epoch: int,
                    aborted: bool = False) -> None:
    arrays = dict(state.W)
    arrays["alpha"] = state.alpha
    meta = {"net": net.describe(), "train": asdict(cfg), "l": be.cfg.l, "f": be.cfg.f, "backend": be.kind,
            "party": getattr(be, "party", None), "digest": config_digest(net, cfg, be.cfg),
            "counters": {"masks": be._masks, "zeros": getattr(be, "_zeros", 0)},
            "arrays": [[k, list(np.shape(v))] for k, v in arrays.items()]}
    blob = json.dumps(meta, sort_keys=True).encode()
    body = b"".join(np.ascontiguousarray(_raw(be, arrays[k])).astype("<u8").tobytes() for k, _ in meta["arrays"])
    Path(path).write_bytes(CKPT_MAGIC + struct.pack("<HIBI", CKPT_VERSION, epoch, int(aborted), len(blob))
                           + blob + body)


@dataclass
class Checkpoint:
    epoch: int
    aborted: bool
    meta: dict
    arrays: dict[str, np.ndarray]


def read_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:4] != CKPT_MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic at offset 0")
    head = struct.calcsize("<HIBI")
    if len(raw) < 4 + head:
        raise FormatError(f"{path}: checkpoint header truncated at offset {len(raw)}")
    version, epoch, aborted, n = struct.unpack_from("<HIBI", raw, 4)
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version} at offset 4")
    pos = 4 + head
    meta = json.loads(raw[pos:pos + n])
    pos += n
    arrays = {}
    for name, shape in meta["arrays"]:
        count = int(np.prod(shape, dtype=np.int64))
        if pos + 8 * count > len(raw):
            raise FormatError(f"{path}: array {name!r} truncated at offset {len(raw)}")
        arrays[name] = np.frombuffer(raw, "<u8", count, pos).reshape(shape).astype(U64)
        pos += 8 * count
    return Checkpoint(epoch, bool(aborted), meta, arrays)


def resume_state(path, sess, net: SuperNet, cfg: TrainConfig) -> tuple[NetState, int]:
    """Load a checkpoint for this backend; on shares both servers must hold matching files."""
    be = as_backend(sess)
    ck = read_checkpoint(path)
    digest = config_digest(net, cfg, be.cfg)
    if ck.meta["digest"] != digest or ck.meta["backend"] != be.kind:
        raise ConfigError(f"{path}: checkpoint was written for a different configuration")
    if be.kind == "secure":
        if ck.meta.get("party") != be.party:
            raise ConfigError(f"{path}: checkpoint belongs to party {ck.meta.get('party')}")
        mine = f"{digest}:{ck.epoch}".encode()
        if be.sess.exchange(Kind.CONTROL, mine) != mine:
            raise ProtocolError("peer checkpoint does not match (epoch or configuration differ)")
    be._masks = ck.meta["counters"]["masks"]
    if hasattr(be, "_zeros"):
        be._zeros = ck.meta["counters"]["zeros"]
    vals = {k: _unraw(be, v) for k, v in ck.arrays.items()}
    alpha = vals.pop("alpha")
    return NetState(vals, ArchParams(alpha)), ck.epoch


def evaluate_accuracy(sess, net: SuperNet, state: NetState, x, y, cfg: TrainConfig, batch: int = 256) -> float:
    """Classification accuracy; on shares the probabilities are opened under the test flag."""
    be = as_backend(sess)
    n = int(np.shape(x)[0])
    correct = 0
    for s in range(0, n, batch):
        p, _ = supernet_forward(be, net, state, np.asarray(x)[s:s + batch], cfg.softmax)
        pc = be.reveal(p, "test")
        yc = be.reveal(np.asarray(y)[s:s + batch], "test")
        correct += int(np.sum(np.argmax(pc, axis=1) == np.argmax(yc, axis=1)))
    return correct / max(n, 1)


__all__ = [
    "ArchParams", "Architecture", "Checkpoint", "DEFAULT_UNITS", "EpochRecord", "ForwardCache", "LossKind",
    "NetState", "SearchData", "SearchResult", "SuperNet", "TrainConfig", "UnitKind", "argmax_units",
    "col2im", "derive_architecture", "epoch_order", "evaluate_accuracy", "im2col", "init_params", "load_state",
    "mixed_layer_backward", "mixed_layer_forward", "pp_nas_search", "read_checkpoint", "resume_state",
    "reveal_losses", "save_checkpoint", "sgd_step", "share_values", "split_dataset", "supernet_backward",
    "supernet_forward", "unit_backward", "unit_forward", "update_arch", "update_weights",
]
