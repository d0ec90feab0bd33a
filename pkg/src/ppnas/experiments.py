"""Experiment drivers shared by the CLI and the acceptance tests.

Each driver returns plain rows and summaries; writing CSV/JSON/figures is
the CLI's job.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from ppnas.backend import as_backend
from ppnas.errors import ConfigError, FixedPointOverflow, NumericError
from ppnas.mnist import Dataset, load_default
from ppnas.nas import (
    NetState,
    SuperNet,
    TrainConfig,
    argmax_units,
    derive_architecture,
    evaluate_accuracy,
    init_params,
    load_state,
    pp_nas_search,
    reveal_losses,
    share_values,
    split_dataset,
)
from ppnas.oracle import NetworkAConfig, OracleMode, oracle_train, train_network_a
from ppnas.primitives import secure_maxpool, secure_pair_max, secure_relu
from ppnas.protocols import SoftmaxConfig, hat_exp_local, softmax_bounds
from ppnas.ring import DEFAULT, FixedPointConfig, encode, make_shares, mul_shares
from ppnas.runtime import FileDealer, run_pair

BENCH_PROTOCOLS = ("relu", "max", "maxpool", "mult")


# ---------------------------------------------------------------------------
# Protocol benchmark


def bench(protocol: str, n: int, cfg: FixedPointConfig = DEFAULT, seed: int = 0,
          dealer_paths: tuple[str, str] | None = None) -> dict:
    """n invocations of one sub-protocol over the in-process transport.

    Returns one row: protocol, invocations, Kb and seconds per invocation
    (both directions, as seen by party 0).
    """
    if protocol not in BENCH_PROTOCOLS:
        raise ConfigError(f"unknown protocol {protocol!r}; choose from {BENCH_PROTOCOLS}")
    if n < 0:
        raise ConfigError("n must be >= 0")
    row = {"protocol": protocol, "l": cfg.l, "invocations": n, "comm_kb": 0.0, "time_s": 0.0, "bytes_total": 0}
    if n == 0:
        return row
    rng = np.random.default_rng([seed, 0xBE4C])
    vals = rng.uniform(-100, 100, size=(2, 4 * n) if protocol == "maxpool" else (2, n))
    s = [make_shares(encode(v, cfg), rng, cfg) for v in vals]

    def fn(sess):
        if dealer_paths is not None:
            sess.dealer = FileDealer(dealer_paths[sess.party], sess.party)
        x, y = s[0][sess.party], s[1][sess.party]
        t0 = time.perf_counter()
        if protocol == "relu":
            secure_relu(x, sess)
        elif protocol == "max":
            secure_pair_max(x, y, sess)
        elif protocol == "maxpool":
            secure_maxpool(x.reshape(n, 2, 2), sess)
        else:
            with sess.measure("mult", n):
                mul_shares(sess, x, y)
        return sess.channel.bytes_sent + sess.channel.bytes_received, time.perf_counter() - t0

    (nbytes, secs), _ = run_pair(fn, cfg=cfg, seed=seed)
    row.update(comm_kb=nbytes * 8 / 1024 / n, time_s=secs / n, bytes_total=nbytes)
    return row


def transport_run(transport: str, n: int = 256, cfg: FixedPointConfig = DEFAULT, seed: int = 0,
                  record: bool = False) -> list[dict]:
    """One fixed-seed ReLU batch over ``"inprocess"`` or ``"tcp"`` (localhost), handshake included.

    Returns per party: transcript digest, byte counters, CommStats rows, the
    output shares and, with ``record``, the raw sent frames.
    """
    import threading

    from ppnas.runtime import InProcessChannel, connect

    rng = np.random.default_rng([seed, 0x7470])
    shares = make_shares(encode(rng.uniform(-100, 100, n), cfg), rng, cfg)
    out: list[dict | None] = [None, None]
    errors: list[BaseException] = []
    ready = threading.Event()
    pair = InProcessChannel.pair() if transport == "inprocess" else None

    def party(role):
        try:
            if transport == "inprocess":
                sess = connect(role, "inprocess", channel=pair[role], cfg=cfg, seed=seed)
            elif role == 0:
                sess = connect(0, "tcp", port=0, listen=True, ready=ready, cfg=cfg, seed=seed)
            else:
                ready.wait(10)
                sess = connect(1, "tcp", port=ready.port, listen=False, cfg=cfg, seed=seed)
            sess.channel.record = record
            res = secure_relu(shares[role], sess)
            ch = sess.channel
            out[role] = {"digest": ch.transcript_digest, "bytes_sent": ch.bytes_sent,
                         "bytes_received": ch.bytes_received, "stats": sess.stats.report(),
                         "output": res.output, "derivative": res.derivative,
                         "frames": list(ch.transcript)}
            sess.close()
        except BaseException as exc:  # noqa: BLE001 - re-raised below
            errors.append(exc)

    worker = threading.Thread(target=party, args=(1,), daemon=True)
    worker.start()
    party(0)
    worker.join()
    if errors:
        raise errors[0]
    return out


# ---------------------------------------------------------------------------
# Softmax surrogate experiment on Network A


def network_a_data(subset: int | None, seed: int, directory=None) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """(x_train, y_train, x_test, labels_test).  With official files the test split is t10k;
    with the bundled sample a seeded 80/20 split of the subset."""
    from ppnas.mnist import find_mnist, ingest_mnist

    img, lab = find_mnist(directory, "train")
    timg, tlab = find_mnist(directory, "test")
    train = ingest_mnist(img, lab, subset=subset)
    if timg != img:
        test = ingest_mnist(timg, tlab)
    else:
        perm = np.random.default_rng([seed, 0x5350]).permutation(len(train))
        cut = int(0.8 * len(train))
        train, test = train.take(perm[:cut]), train.take(perm[cut:])
    return train.features(), train.one_hot(), test.features(), test.labels


def hat_overflow(L: int, x_max: float = 16.0, fp: FixedPointConfig = DEFAULT) -> bool:
    """Whether the H-scaled hat-exp of [0, x_max] leaves the fixed-point range (over- or underflow)."""
    try:
        hat_exp_local(np.array([0.0, x_max]), SoftmaxConfig(L=L), fp=fp)
    except FixedPointOverflow:
        return True
    return False


def secure_softmax_fits(L: int, n: int = 10, fp: FixedPointConfig = DEFAULT) -> bool:
    from ppnas.protocols import reciprocal_plan

    cfg = SoftmaxConfig(L=L)
    lo, hi = softmax_bounds(n, cfg, fp)
    plan = reciprocal_plan(lo, hi, fp.f, cfg.iterations)
    return plan.F + fp.f + plan.s + 2 <= fp.l - 1


def softmax_experiment(Ls, *, epochs: int = 5, subset: int | None = 10000, seed: int = 0, lr: float = 0.1,
                       batch_size: int = 128, threshold: float = 0.934, directory=None,
                       fp: FixedPointConfig = DEFAULT) -> tuple[list[dict], list[dict]]:
    """Train Network A with f1 and with f2 for each L.

    Returns (per-epoch rows, per-variant summary rows).  Overflow of the
    H-scaled surrogate at (l, f) is flagged per L, never fatal.
    """
    data = network_a_data(subset, seed, directory)
    variants = [("f1", 0)] + [("f2", int(L)) for L in Ls]
    rows, summary = [], []
    for name, L in variants:
        cfg = NetworkAConfig(softmax=name, L=max(L, 1), epochs=epochs, batch_size=batch_size, lr=lr, seed=seed)
        try:
            traj = train_network_a(*data, cfg)
            failed = ""
        except NumericError as exc:
            traj, failed = None, str(exc)
        label = "f1" if name == "f1" else f"f2_L{L}"
        if traj is not None:
            for e, (loss, acc, sec) in enumerate(zip(traj.losses, traj.accuracies, traj.seconds), 1):
                rows.append({"variant": label, "L": L, "epoch": e, "loss": loss, "accuracy": acc, "seconds": sec})
        tt = traj.time_to(threshold) if traj else None
        summary.append({
            "variant": label, "L": L,
            "final_accuracy": traj.accuracies[-1] if traj and traj.accuracies else float("nan"),
            "epochs_to_threshold": tt,
            "seconds_to_threshold": traj.seconds[tt - 1] if tt else None,
            "hat_overflow": hat_overflow(L, fp=fp) if name == "f2" else False,
            "secure_fits": secure_softmax_fits(L, fp=fp) if name == "f2" else True,
            "error": failed,
        })
    return rows, summary


# ---------------------------------------------------------------------------
# Super-net search


def toy_dataset(classes=(0, 1), subset: int | None = 2000, directory=None, side: int = 14,
                seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Features (n, side^2) in [0, 1] and one-hot labels of the selected classes."""
    from ppnas.mnist import find_mnist, ingest_mnist

    d: Dataset = ingest_mnist(*find_mnist(directory), downsample_to=side).select(classes)
    if subset is not None and subset < len(d):
        d = d.take(np.sort(np.random.default_rng([seed, 0x5542]).permutation(len(d))[:subset]))
    return d.features(), d.one_hot()


@dataclass
class SecureSearchOutcome:
    losses: list[tuple[float, float]]
    alphas: list[np.ndarray]
    weights: list[dict[str, np.ndarray]]
    accuracies: list[float]
    architecture: list[int]
    seconds: float
    epoch_seconds: list[float]
    comm: list[dict]
    audit: dict[str, int]
    unsanctioned: int


def search_values(net: SuperNet, x, y, cfg: TrainConfig) -> dict[str, np.ndarray]:
    values = init_params(net, cfg)
    values.update(split_dataset(x, y, cfg.seed))
    return values


def secure_search(net: SuperNet, x, y, cfg: TrainConfig, fp: FixedPointConfig = DEFAULT, *,
                  track: bool = True, eval_samples: int = 0, share_seed: int | None = None,
                  checkpoint_dir=None) -> SecureSearchOutcome:
    """Both servers in-process.  With ``track`` the per-epoch W and alpha are opened
    under the test flag (lockstep checks); ``eval_samples`` > 0 measures validation
    accuracy on that many validation samples, also under the test flag."""
    shares = share_values(search_values(net, x, y, cfg), cfg.seed if share_seed is None else share_seed, fp)

    def fn(sess):
        be = as_backend(sess)
        state, data = load_state(be, shares[sess.party])
        alphas, weights, accs, times = [], [], [], []
        if track:
            alphas.append(be.reveal(state.alpha, "test"))
        t0 = time.perf_counter()

        def on_epoch(epoch, st, rec):
            times.append(time.perf_counter() - t0)
            if track:
                alphas.append(be.reveal(st.alpha, "test"))
                weights.append({k: be.reveal(v, "test") for k, v in st.W.items()})
            if eval_samples:
                accs.append(evaluate_accuracy(be, net, st, np.asarray(data.x_val)[:eval_samples],
                                              np.asarray(data.y_val)[:eval_samples], cfg))

        ck = None if checkpoint_dir is None else f"{checkpoint_dir}/party{sess.party}.ppna"
        res = pp_nas_search(data, net, state, cfg, sess, on_epoch=on_epoch, checkpoint=ck)
        losses = reveal_losses(sess, res.history) if sess.test_reveal else []
        arch = derive_architecture(res.arch, net, sess, joint=True)
        return SecureSearchOutcome(losses, alphas, weights, accs, arch.indices, time.perf_counter() - t0, times,
                                   sess.stats.report(), dict(sess.audit.counts), sess.audit.unsanctioned)

    out, _ = run_pair(fn, cfg=fp, seed=cfg.seed, test_reveal=True)
    return out


def lockstep_report(secure: SecureSearchOutcome, oracle, fp: FixedPointConfig = DEFAULT,
                    threshold_ulps: int = 64) -> dict:
    """Compare a tracked secure run against a MIRROR-mode oracle trajectory (with record_states).

    An element diverges in an epoch when its secure and mirror values differ by
    more than ``threshold_ulps`` units of 2^-f.
    """
    scale = float(1 << fp.f)
    epochs = []
    for e, sw in enumerate(secure.weights):
        st = oracle.states[e]
        diffs = [np.abs(np.rint(sw[k] * scale) - np.asarray(st.W[k], dtype=np.float64)).ravel() for k in sw]
        diffs.append(np.abs(np.rint(secure.alphas[e + 1] * scale) - np.asarray(st.alpha, dtype=np.float64)).ravel())
        d = np.concatenate(diffs)
        epochs.append({
            "epoch": e + 1,
            "elements": int(d.size),
            "diverged": int(np.sum(d > threshold_ulps)),
            "fraction": float(np.mean(d > threshold_ulps)),
            "max_ulps": float(d.max()),
            "median_ulps": float(np.median(d)),
            "loss_w_secure": secure.losses[e][0] if secure.losses else None,
            "loss_w_oracle": oracle.losses[e][0],
        })
    return {
        "epochs": epochs,
        "architecture_secure": secure.architecture,
        "architecture_oracle": oracle.architecture,
        "same_architecture": secure.architecture == oracle.architecture,
        "max_loss_diff": max((abs(a[0] - b[0]) for a, b in zip(secure.losses, oracle.losses)), default=0.0),
    }


def oracle_search(net: SuperNet, x, y, cfg: TrainConfig, mode=OracleMode.MIRROR, fp: FixedPointConfig = DEFAULT,
                  record_states: bool = True):
    return oracle_train(net, x, y, cfg, mode, fp, record_states=record_states)


__all__ = ["BENCH_PROTOCOLS", "SecureSearchOutcome", "bench", "hat_overflow", "lockstep_report", "network_a_data",
           "oracle_search", "search_values", "secure_search", "secure_softmax_fits", "softmax_experiment",
           "toy_dataset"]
