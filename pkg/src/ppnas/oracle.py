"""Cleartext reference implementations used as ground truth by the tests.

Two modes: ``OracleMode.REAL`` (float64) and ``OracleMode.MIRROR`` (the
fixed-point rounding of the secure path).  Composite oracles run the same
backend-generic code as the secure path on a :class:`RealBackend` or
:class:`MirrorBackend`; the elementary ones below are written out directly.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from ppnas.backend import Backend, MirrorBackend, RealBackend
from ppnas.errors import NumericError
from ppnas.nas import (
    NetState,
    SearchResult,
    SuperNet,
    TrainConfig,
    argmax_units,
    evaluate_accuracy,
    init_params,
    load_state,
    pp_nas_search,
    reveal_losses,
    split_dataset,
)
from ppnas.ring import DEFAULT, FixedPointConfig


class OracleMode(str, Enum):
    REAL = "real"
    MIRROR = "mirror"


def oracle_backend(mode: OracleMode | str, cfg: FixedPointConfig = DEFAULT, seed: int = 0) -> Backend:
    mode = OracleMode(mode)
    return RealBackend(cfg, seed) if mode is OracleMode.REAL else MirrorBackend(cfg, seed)


class DegenerateInputError(NumericError):
    """f1 Softmax on a vector with no positive entry."""


# ---------------------------------------------------------------------------
# Elementary operations


def oracle_relu(x):
    return np.maximum(np.asarray(x), 0)


def oracle_max(x, y):
    return np.maximum(np.asarray(x), np.asarray(y))


def oracle_maxpool(x):
    """2x2 / stride-2 max over the last two axes."""
    x = np.asarray(x)
    h, w = x.shape[-2] // 2, x.shape[-1] // 2
    return x[..., :2 * h, :2 * w].reshape(x.shape[:-2] + (h, 2, w, 2)).max(axis=(-3, -1))


def oracle_softmax_true(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def oracle_softmax_f1(x, eps: float = 0.0):
    """ReLU(x) / sum ReLU(x); ``eps`` > 0 smooths every entry (used in training)."""
    r = np.maximum(np.asarray(x, dtype=np.float64), 0.0) + eps
    s = r.sum(axis=-1, keepdims=True)
    if np.any(s <= 0):
        raise DegenerateInputError("f1 Softmax undefined: no positive entry in an input row")
    return r / s


def oracle_softmax_f2(x, L: int = 4, relu: bool = True, clip: float | None = 16.0):
    """Power-surrogate Softmax hat(x_i) / sum_j hat(x_j) with hat(x) = ((L + x) / e^L)^L.

    ``relu``/``clip`` restrict x to [0, clip] first, the input domain of the
    secure protocol.  H = (L / e^L)^L cancels, so the ratio is formed from
    (1 + x/L)^L to stay finite for large L.
    """
    x = np.asarray(x, dtype=np.float64)
    if relu:
        x = np.maximum(x, 0.0)
    if clip is not None:
        x = np.minimum(x, clip)
    base = 1.0 + x / L
    if np.any(base <= 0):
        raise NumericError(f"hat-exp base not positive for L={L}")
    lg = L * np.log(base)
    g = np.exp(lg - lg.max(axis=-1, keepdims=True))
    return g / g.sum(axis=-1, keepdims=True)


def oracle_conv_same(x, w, b=0.0):
    """Single-channel 'same' convolution (cross-correlation) of (B, H, W) images."""
    x = np.asarray(x, dtype=np.float64)
    k = w.shape[0]
    r = k // 2
    pad = np.pad(x, ((0, 0), (r, r), (r, r)))
    win = np.lib.stride_tricks.sliding_window_view(pad, (k, k), axis=(1, 2))
    return np.einsum("bijkl,kl->bij", win, w) + b


def oracle_fc(x, W, b):
    return np.asarray(x) @ W + b


# ---------------------------------------------------------------------------
# Network A (784-128-10) with an f1 or f2 output layer


@dataclass(frozen=True)
class NetworkAConfig:
    softmax: str = "f2"          # "f1" or "f2"
    L: int = 4
    epochs: int = 5
    batch_size: int = 128
    lr: float = 0.1
    hidden: int = 128
    seed: int = 0
    eps: float = 1e-3            # f1 smoothing so log p stays finite
    clip: float = 16.0
    out_bias: float = 1.0


@dataclass
class Trajectory:
    losses: list[float] = field(default_factory=list)
    accuracies: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    params: dict = field(default_factory=dict)

    def time_to(self, threshold: float) -> int | None:
        """1-based epoch at which accuracy first reaches ``threshold`` (None if never)."""
        for i, a in enumerate(self.accuracies):
            if a >= threshold:
                return i + 1
        return None


def _output_probs(z, cfg: NetworkAConfig):
    if cfg.softmax == "f1":
        return oracle_softmax_f1(z, cfg.eps)
    return oracle_softmax_f2(z, cfg.L, clip=cfg.clip)


def _output_grad(z, p, y, cfg: NetworkAConfig):
    """d(-log p_y)/dz for the chosen surrogate (sum over the batch)."""
    if cfg.softmax == "f1":
        ind = (z > 0).astype(np.float64)
        r = np.maximum(z, 0.0) + cfg.eps
        s = r.sum(axis=1, keepdims=True)
        ry = (r * y).sum(axis=1, keepdims=True)
        return ind * (1.0 / s - y / ry)
    ind = ((z > 0) & (z < cfg.clip)).astype(np.float64)
    c = np.clip(z, 0.0, cfg.clip)
    return (p - y) * cfg.L / (cfg.L + c) * ind


def network_a_init(n_in: int, n_out: int, cfg: NetworkAConfig) -> dict[str, np.ndarray]:
    rng = np.random.default_rng([cfg.seed, 0x4E41])
    b1, b2 = 1.0 / np.sqrt(n_in), 1.0 / np.sqrt(cfg.hidden)
    return {"W1": rng.uniform(-b1, b1, (n_in, cfg.hidden)), "b1": np.zeros(cfg.hidden),
            "W2": rng.uniform(-b2, b2, (cfg.hidden, n_out)), "b2": np.full(n_out, cfg.out_bias)}


def network_a_forward(P, x, cfg: NetworkAConfig):
    z1 = x @ P["W1"] + P["b1"]
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ P["W2"] + P["b2"]
    return z1, a1, z2, _output_probs(z2, cfg)


def network_a_accuracy(P, x, labels, cfg: NetworkAConfig) -> float:
    _, _, z2, p = network_a_forward(P, x, cfg)
    return float(np.mean(np.argmax(p, axis=1) == labels))


def train_network_a(x_train, y_train, x_test, labels_test, cfg: NetworkAConfig) -> Trajectory:
    """Mini-batch SGD with hand-written backprop; test accuracy after every epoch."""
    P = network_a_init(x_train.shape[1], y_train.shape[1], cfg)
    traj = Trajectory()
    t0 = time.perf_counter()
    B = cfg.batch_size
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, 0x4F52, epoch]).permutation(len(x_train))
        total, count = 0.0, 0
        for s in range(0, len(order) - B + 1, B):
            idx = order[s:s + B]
            x, y = x_train[idx], y_train[idx]
            z1, a1, z2, p = network_a_forward(P, x, cfg)
            total += float(-np.log(np.maximum((p * y).sum(axis=1), 1e-12)).sum())
            count += len(idx)
            dz2 = _output_grad(z2, p, y, cfg)
            dz1 = (dz2 @ P["W2"].T) * (z1 > 0)
            step = cfg.lr / len(idx)
            P["W2"] -= step * (a1.T @ dz2)
            P["b2"] -= step * dz2.sum(axis=0)
            P["W1"] -= step * (x.T @ dz1)
            P["b1"] -= step * dz1.sum(axis=0)
        traj.losses.append(total / max(count, 1))
        traj.accuracies.append(network_a_accuracy(P, x_test, labels_test, cfg))
        traj.seconds.append(time.perf_counter() - t0)
    traj.params = P
    return traj


# ---------------------------------------------------------------------------
# Super-net search oracle


@dataclass
class SearchTrajectory:
    losses: list[tuple[float, float]]
    accuracies: list[float]
    alphas: list[np.ndarray]
    result: SearchResult
    backend: Backend

    @property
    def architecture(self) -> list[int]:
        return argmax_units(self.alphas[-1])


def oracle_train(net: SuperNet, x: np.ndarray, y: np.ndarray, cfg: TrainConfig,
                 mode: OracleMode | str = OracleMode.MIRROR, fp: FixedPointConfig = DEFAULT,
                 record_states: bool = False) -> SearchTrajectory:
    """Run the search in the clear; per epoch records (L_W, L_A), validation accuracy and alpha.

    Uses the same initialization, split and batch order as the secure run under
    ``cfg.seed``, so in MIRROR mode it is the lockstep oracle.
    """
    be = oracle_backend(mode, fp, cfg.seed)
    values = init_params(net, cfg)
    values.update(split_dataset(x, y, cfg.seed))
    state, data = load_state(be, values)
    accs: list[float] = []
    alphas = [be.decode(state.alpha)]
    states: list[NetState] = []

    def on_epoch(epoch, st, rec):
        accs.append(evaluate_accuracy(be, net, st, data.x_val, data.y_val, cfg))
        alphas.append(be.decode(st.alpha))
        if record_states:
            states.append(NetState({k: np.copy(v) for k, v in st.W.items()}, type(st.arch)(np.copy(st.alpha))))

    res = pp_nas_search(data, net, state, cfg, be, on_epoch=on_epoch)
    traj = SearchTrajectory(reveal_losses(be, res.history), accs, alphas, res, be)
    traj.states = states
    return traj


__all__ = [
    "DegenerateInputError", "NetworkAConfig", "OracleMode", "SearchTrajectory", "Trajectory", "network_a_accuracy",
    "network_a_forward", "network_a_init", "oracle_backend", "oracle_conv_same", "oracle_fc", "oracle_max",
    "oracle_maxpool", "oracle_relu", "oracle_softmax_f1", "oracle_softmax_f2", "oracle_softmax_true",
    "oracle_train", "train_network_a",
]
