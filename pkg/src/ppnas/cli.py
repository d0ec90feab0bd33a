"""Command-line entry point: ``ppnas <subcommand> ...``.

Every report-producing subcommand writes ``<out>/<experiment>.csv`` (metric
rows), ``<out>/<experiment>.json`` (config echo, summaries, communication
table) and a PNG figure next to them.

Exit codes: 0 success, 2 configuration/format error, 3 transport or protocol
error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from ppnas.errors import ConfigError, MPCError
from ppnas.ring import FixedPointConfig

log = logging.getLogger("ppnas")

CSV_SCHEMAS = {
    "bench": ["protocol", "l", "invocations", "comm_kb", "time_s", "bytes_total"],
    "softmax_exp": ["variant", "L", "epoch", "loss", "accuracy", "seconds"],
    "nas_search": ["epoch", "loss_w", "loss_a", "val_error", "seconds"],
}


# ---------------------------------------------------------------------------
# Output helpers


def write_csv(path: Path, rows: list[dict], columns: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow(r)


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serialisable: {type(o)}")


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_bench(path: Path, rows: list[dict]) -> None:
    plt = _plt()
    fig, ax = plt.subplots(1, 2, figsize=(8, 3.2))
    names = [r["protocol"] for r in rows]
    ax[0].bar(names, [r["comm_kb"] for r in rows], color="tab:blue")
    ax[0].set_ylabel("Kb per invocation")
    ax[1].bar(names, [r["time_s"] * 1e3 for r in rows], color="tab:orange")
    ax[1].set_ylabel("ms per invocation")
    for a in ax:
        a.set_yscale("log")
    fig.suptitle(f"sub-protocol cost (l={rows[0]['l'] if rows else '?'})")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_softmax(path: Path, rows: list[dict], summary: list[dict], threshold: float) -> None:
    plt = _plt()
    fig, ax = plt.subplots(1, 2, figsize=(9, 3.4))
    for s in summary:
        pts = [r for r in rows if r["variant"] == s["variant"]]
        if pts:
            ax[0].plot([p["epoch"] for p in pts], [p["accuracy"] for p in pts], marker="o", label=s["variant"],
                       linestyle="--" if s["variant"] == "f1" else "-")
    ax[0].axhline(threshold, color="grey", lw=0.8, ls=":")
    ax[0].set_xlabel("epoch")
    ax[0].set_ylabel("test accuracy")
    ax[0].legend(fontsize=7)
    f2 = [s for s in summary if s["variant"] != "f1"]
    ax[1].plot([s["L"] for s in f2], [s["final_accuracy"] for s in f2], marker="s")
    f1 = [s for s in summary if s["variant"] == "f1"]
    if f1:
        ax[1].axhline(f1[0]["final_accuracy"], color="tab:red", ls="--", label="f1")
        ax[1].legend(fontsize=7)
    ax[1].set_xlabel("L")
    ax[1].set_ylabel("final test accuracy")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_search(path: Path, rows: list[dict], baseline: list[dict] | None = None) -> None:
    plt = _plt()
    fig, ax = plt.subplots(1, 2, figsize=(9, 3.4))
    for data, label in ((rows, "secure" if baseline is not None else "run"), (baseline, "oracle")):
        if not data:
            continue
        ep = [r["epoch"] for r in data]
        ax[0].plot(ep, [r["loss_w"] for r in data], marker="o", label=f"{label} L_W")
        err = [r["val_error"] for r in data if r["val_error"] is not None]
        if err:
            ax[1].plot([r["seconds"] for r in data if r["val_error"] is not None], err, marker="o", label=label)
    ax[0].set_xlabel("epoch")
    ax[0].set_ylabel("training loss")
    ax[0].legend(fontsize=7)
    ax[1].set_xlabel("wall-clock seconds")
    ax[1].set_ylabel("validation error")
    if ax[1].lines:
        ax[1].legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _fp(args) -> FixedPointConfig:
    return FixedPointConfig(l=args.l, f=args.f)


def _echo(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func"}


# ---------------------------------------------------------------------------
# Subcommands


def cmd_dealer(args) -> int:
    from ppnas.runtime import dealer_generate

    out = _out(args)
    paths = (str(out / "dealer0.mpc"), str(out / "dealer1.mpc"))
    dealer_generate({args.l: args.count}, args.ot, args.seed, paths)
    write_json(out / "dealer.json", {"config": _echo(args), "files": list(paths)})
    print(f"wrote {paths[0]} and {paths[1]}")
    return 0


def cmd_ingest(args) -> int:
    from ppnas.mnist import IMAGE_MAGIC, LABEL_MAGIC, ingest_mnist, write_idx

    ds = ingest_mnist(args.images, args.labels, subset=args.subset, downsample_to=args.downsample)
    out = _out(args)
    write_idx(out / "images-idx3-ubyte.gz", ds.images, IMAGE_MAGIC)
    write_idx(out / "labels-idx1-ubyte.gz", ds.labels.astype(np.uint8), LABEL_MAGIC)
    info = {"config": _echo(args), "n": len(ds), "shape": list(ds.images.shape[1:]),
            "class_counts": np.bincount(ds.labels, minlength=10).tolist(), "sha256": ds.checksum()}
    write_json(out / "dataset.json", info)
    print(json.dumps({k: info[k] for k in ("n", "shape", "sha256")}))
    return 0


def cmd_bench(args) -> int:
    from ppnas.experiments import BENCH_PROTOCOLS, bench

    protocols = BENCH_PROTOCOLS if args.protocol == "all" else (args.protocol,)
    dealer = None
    if args.dealer:
        d = Path(args.dealer)
        dealer = (str(d / "dealer0.mpc"), str(d / "dealer1.mpc"))
    rows = [bench(p, args.n, _fp(args), args.seed, dealer) for p in protocols]
    rows = [r for r in rows if r["invocations"]] if args.n else []
    out = _out(args)
    write_csv(out / "bench.csv", rows, CSV_SCHEMAS["bench"])
    write_json(out / "bench.json", {"experiment": "bench", "config": _echo(args), "rows": rows})
    if rows:
        plot_bench(out / "bench.png", rows)
    print(f"{'Protocol':<10} {'Comm. (Kb)':>12} {'Time (s)':>12}")
    for r in rows:
        print(f"{r['protocol']:<10} {r['comm_kb']:>12.2f} {r['time_s']:>12.6f}")
    return 0


def cmd_softmax_exp(args) -> int:
    from ppnas.experiments import softmax_experiment

    rows, summary = softmax_experiment(args.L_list, epochs=args.epochs, subset=args.subset, seed=args.seed,
                                       lr=args.lr, batch_size=args.batch, threshold=args.threshold,
                                       directory=args.mnist, fp=_fp(args))
    out = _out(args)
    write_csv(out / "softmax_exp.csv", rows, CSV_SCHEMAS["softmax_exp"])
    write_json(out / "softmax_exp.json", {"experiment": "softmax_exp", "config": _echo(args), "summary": summary})
    plot_softmax(out / "softmax_exp.png", rows, summary, args.threshold)
    for s in summary:
        flag = " (H-scaled hat-exp overflows at l,f)" if s["hat_overflow"] else ""
        print(f"{s['variant']:<8} final acc {s['final_accuracy']:.4f}  epochs to {args.threshold}: "
              f"{s['epochs_to_threshold']}{flag}")
    return 0


def cmd_share_data(args) -> int:
    """Data-provider step: split the toy dataset and initial parameters into two share files."""
    from ppnas.experiments import search_values, toy_dataset
    from ppnas.nas import SuperNet, share_values

    net, cfg = _net_cfg(args)
    x, y = toy_dataset(args.classes, args.subset, args.mnist)
    shares = share_values(search_values(net, x, y, cfg), args.share_seed, _fp(args))
    out = _out(args)
    for p in (0, 1):
        np.savez(out / f"shares{p}.npz", **shares[p])
    write_json(out / "shares.json", {"config": _echo(args), "n": len(x)})
    print(f"wrote {out / 'shares0.npz'} and {out / 'shares1.npz'}")
    return 0


def _net_cfg(args):
    from ppnas.nas import SuperNet, TrainConfig

    net = SuperNet(N=args.layers, classes=len(args.classes))
    cfg = TrainConfig(epochs=args.epochs, eta_A=args.eta_a, eta_W=args.eta_w, batch_size=args.batch, L=args.L,
                      seed=args.seed)
    return net, cfg


def cmd_nas_search(args) -> int:
    from ppnas.backend import as_backend
    from ppnas.experiments import oracle_search, secure_search, toy_dataset
    from ppnas.nas import derive_architecture, evaluate_accuracy, load_state, pp_nas_search, reveal_losses
    from ppnas.oracle import OracleMode
    from ppnas.runtime import FileDealer, connect

    net, cfg = _net_cfg(args)
    out = _out(args)
    fp = _fp(args)
    report = {"experiment": "nas_search", "config": _echo(args), "net": net.describe()}
    rows: list[dict] = []
    t0 = time.perf_counter()
    if args.oracle:
        x, y = toy_dataset(args.classes, args.subset, args.mnist)
        traj = oracle_search(net, x, y, cfg, OracleMode(args.oracle), fp, record_states=False)
        for e, ((lw, la), acc) in enumerate(zip(traj.losses, traj.accuracies), 1):
            rows.append({"epoch": e, "loss_w": lw, "loss_a": la, "val_error": 1 - acc,
                         "seconds": time.perf_counter() - t0})
        arch = traj.architecture
        report.update(mode=f"oracle-{args.oracle}", alpha=traj.alphas[-1])
    elif args.role is None:
        x, y = toy_dataset(args.classes, args.subset, args.mnist)
        outcome = secure_search(net, x, y, cfg, fp, track=False, eval_samples=args.eval_samples,
                                share_seed=args.share_seed, checkpoint_dir=out)
        for e, (lw, la) in enumerate(outcome.losses, 1):
            acc = outcome.accuracies[e - 1] if outcome.accuracies else None
            rows.append({"epoch": e, "loss_w": lw, "loss_a": la, "val_error": None if acc is None else 1 - acc,
                         "seconds": outcome.epoch_seconds[e - 1]})
        arch = outcome.architecture
        report.update(mode="secure-inprocess", comm=outcome.comm, reveals=outcome.audit)
    else:
        if not args.shares:
            raise ConfigError("--role needs --shares DIR produced by 'share-data'")
        host, port = (args.listen or args.connect or "127.0.0.1:0").rsplit(":", 1)
        sess = connect(args.role, "tcp", address=host, port=int(port), listen=bool(args.listen), cfg=fp,
                       seed=cfg.seed, test_reveal=True, timeout=args.timeout)
        if args.dealer:
            sess.dealer = FileDealer(str(Path(args.dealer) / f"dealer{args.role}.mpc"), args.role)
        be = as_backend(sess)
        with np.load(Path(args.shares) / f"shares{args.role}.npz") as z:
            values = {k: z[k] for k in z.files}
        state, data = load_state(be, values)
        evals: list[float] = []

        def on_epoch(epoch, st, rec):
            if args.eval_samples:
                evals.append(evaluate_accuracy(be, net, st, np.asarray(data.x_val)[:args.eval_samples],
                                               np.asarray(data.y_val)[:args.eval_samples], cfg))
            rows.append({"epoch": epoch + 1, "seconds": time.perf_counter() - t0})

        res = pp_nas_search(data, net, state, cfg, sess, on_epoch=on_epoch, checkpoint=out / f"party{args.role}.ppna")
        for r, (lw, la) in zip(rows, reveal_losses(sess, res.history)):
            r.update(loss_w=lw, loss_a=la, val_error=1 - evals[r["epoch"] - 1] if evals else None)
        arch = derive_architecture(res.arch, net, sess, joint=True).indices
        report.update(mode=f"secure-tcp-role{args.role}", comm=sess.stats.report(), reveals=dict(sess.audit.counts))
        sess.close()
    errs = [r["val_error"] for r in rows if r.get("val_error") is not None]
    report.update(rows=rows, architecture=[net.units[i].value for i in arch], architecture_indices=arch,
                  best_val_error=min(errs) if errs else None, mean_val_error=float(np.mean(errs)) if errs else None,
                  seconds=time.perf_counter() - t0)
    stem = "nas_search" if args.role is None else f"nas_search_role{args.role}"
    write_csv(out / f"{stem}.csv", rows, CSV_SCHEMAS["nas_search"])
    write_json(out / f"{stem}.json", report)
    write_json(out / f"{stem}_architecture.json", {"units": report["architecture"], "indices": arch})
    if rows:
        plot_search(out / f"{stem}.png", rows)
    print("architecture:", " -> ".join(report["architecture"]))
    return 0


# ---------------------------------------------------------------------------
# Parser


def _int_list(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ppnas", description="Two-party secure architecture search toolkit")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--l", type=int, default=64, help="ring bit width")
    common.add_argument("--f", type=int, default=16, help="fractional bits")
    common.add_argument("--out", default="out")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("dealer", parents=[common], help="generate both parties' correlated randomness files")
    s.add_argument("--count", type=int, default=100000, help="scalar Beaver triples")
    s.add_argument("--ot", type=int, default=100000, help="random-OT correlations")
    s.set_defaults(func=cmd_dealer)

    s = sub.add_parser("ingest", parents=[common], help="parse MNIST IDX files into a (subset) dataset")
    s.add_argument("--images", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--subset", type=int)
    s.add_argument("--downsample", type=int)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("bench", parents=[common], help="per-invocation communication and time of sub-protocols")
    s.add_argument("--protocol", choices=["relu", "max", "maxpool", "mult", "all"], default="all")
    s.add_argument("--n", type=int, default=1000)
    s.add_argument("--dealer", help="directory with dealer0.mpc / dealer1.mpc")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("softmax-exp", parents=[common], help="Network A with f1 vs the power surrogate per L")
    s.add_argument("--L", dest="L_list", type=_int_list, default=[1, 2, 3, 4, 5, 6], help="comma list, '' for f1 only")
    s.add_argument("--epochs", type=int, default=5)
    s.add_argument("--subset", type=int, default=10000)
    s.add_argument("--batch", type=int, default=128)
    s.add_argument("--lr", type=float, default=0.1)
    s.add_argument("--threshold", type=float, default=0.934)
    s.add_argument("--mnist", help="directory with official IDX files (default: $MNIST_DIR or bundled sample)")
    s.set_defaults(func=cmd_softmax_exp)

    search = argparse.ArgumentParser(add_help=False)
    search.add_argument("--epochs", type=int, default=3)
    search.add_argument("--batch", type=int, default=128)
    search.add_argument("--L", type=int, default=4)
    search.add_argument("--layers", type=int, default=2)
    search.add_argument("--eta-a", type=float, default=1.0)
    search.add_argument("--eta-w", type=float, default=0.5)
    search.add_argument("--subset", type=int, default=2000)
    search.add_argument("--classes", type=_int_list, default=[0, 1])
    search.add_argument("--mnist")
    search.add_argument("--share-seed", type=int, default=1)

    s = sub.add_parser("share-data", parents=[common, search], help="data-provider step for tcp runs")
    s.set_defaults(func=cmd_share_data)

    s = sub.add_parser("nas-search", parents=[common, search], help="privacy-preserving architecture search")
    s.add_argument("--role", type=int, choices=[0, 1], help="run one server over tcp (default: both in-process)")
    s.add_argument("--listen", metavar="HOST:PORT")
    s.add_argument("--connect", metavar="HOST:PORT")
    s.add_argument("--shares", help="directory written by share-data (tcp mode)")
    s.add_argument("--dealer", help="directory with dealer files (tcp mode; default: seeded dealer)")
    s.add_argument("--oracle", nargs="?", const="mirror", choices=["mirror", "real"],
                   help="run the cleartext baseline instead")
    s.add_argument("--eval-samples", type=int, default=64, help="validation samples opened per epoch for the error curve")
    s.add_argument("--timeout", type=float, default=30.0)
    s.set_defaults(func=cmd_nas_search)
    return p


def main(argv: list[str] | None = None) -> int:
    from ppnas.runtime import env_seed

    parser = build_parser()
    args = parser.parse_args(argv)
    args.seed = env_seed(args.seed)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except MPCError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
