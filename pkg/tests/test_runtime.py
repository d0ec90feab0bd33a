import threading

import numpy as np
import pytest

from conftest import share, two_party
from ppnas.errors import FormatError, HandshakeError, ProtocolError
from ppnas.experiments import transport_run
from ppnas.ring import DEFAULT, FixedPointConfig, mul_shares, reconstruct
from ppnas.runtime import (
    CommStats,
    FileDealer,
    InProcessChannel,
    Kind,
    RevealAudit,
    SeededDealer,
    Session,
    connect,
    dealer_generate,
    frame,
    run_pair,
    unframe,
)


def test_frame_roundtrip_and_errors():
    data = frame(3, Kind.OT, b"abc")
    assert unframe(data) == (3, Kind.OT, b"abc")
    with pytest.raises(FormatError):
        unframe(data[:-1])
    with pytest.raises(FormatError):
        unframe(b"\x01")


def test_channel_counts_and_tags():
    a, b = InProcessChannel.pair()
    a.send(Kind.OPEN, b"x" * 10, tag=1)
    a.send(Kind.CONTROL, b"y", tag=0)
    assert b.recv_kind(Kind.CONTROL, 0) == b"y"   # tag 1 frame buffered meanwhile
    assert b.recv_kind(Kind.OPEN, 1) == b"x" * 10
    assert a.bytes_sent == b.bytes_received == 6 + 10 + 6 + 1
    a.send(Kind.OPEN, b"")
    with pytest.raises(ProtocolError):
        b.recv_kind(Kind.OT)


def _handshake_pair(cfg0, cfg1, seed0=0, seed1=0):
    c0, c1 = InProcessChannel.pair(timeout=5)
    errs = []

    def side(role, ch, cfg, seed):
        try:
            connect(role, "inprocess", channel=ch, cfg=cfg, seed=seed)
        except Exception as exc:  # noqa: BLE001
            errs.append(exc)

    t = threading.Thread(target=side, args=(1, c1, cfg1, seed1))
    t.start()
    side(0, c0, cfg0, seed0)
    t.join()
    return errs


def test_handshake_mismatch_aborts():
    assert _handshake_pair(DEFAULT, DEFAULT) == []
    errs = _handshake_pair(DEFAULT, FixedPointConfig(l=32, f=16))
    assert errs and all(isinstance(e, HandshakeError) for e in errs)
    assert "'l'" in str(errs[0])
    errs = _handshake_pair(DEFAULT, DEFAULT, 1, 2)
    assert errs and isinstance(errs[0], HandshakeError)


def test_seeded_dealer_is_deterministic_and_correct():
    t = [SeededDealer(5, p).triple((4,), (4,), "mul", DEFAULT) for p in (0, 1)]
    again = SeededDealer(5, 0).triple((4,), (4,), "mul", DEFAULT)
    assert np.array_equal(t[0].a, again.a)
    a, b, c = (reconstruct(getattr(t[0], k), getattr(t[1], k)) for k in "abc")
    assert np.array_equal(c, a * b)
    o0, o1 = SeededDealer(5, 0).ot(8), SeededDealer(5, 1).ot(8)
    assert np.array_equal(o1.mc, np.where(o1.choice[:, None], o0.m1, o0.m0))


def test_file_dealer(tmp_path):
    paths = (str(tmp_path / "p0.bin"), str(tmp_path / "p1.bin"))
    dealer_generate({64: 100}, 50, seed=1, paths=paths)
    again = (str(tmp_path / "q0.bin"), str(tmp_path / "q1.bin"))
    dealer_generate({64: 100}, 50, seed=1, paths=again)
    assert open(paths[0], "rb").read() == open(again[0], "rb").read()

    d = [FileDealer(p, i) for i, p in enumerate(paths)]
    t = [x.triple((60,), (60,), "mul", DEFAULT) for x in d]
    assert np.array_equal(reconstruct(t[0].c, t[1].c), reconstruct(t[0].a, t[1].a) * reconstruct(t[0].b, t[1].b))
    with pytest.raises(ProtocolError):
        d[0].triple((41,), (41,), "mul", DEFAULT)   # only 40 left
    with pytest.raises(ProtocolError):
        d[0].triple((2, 3), (3, 2), "matmul", DEFAULT)

    def fn(sess, x, y):
        sess.dealer = FileDealer(paths[sess.party], sess.party)
        return mul_shares(sess, x, y)

    v = np.arange(10, dtype=np.uint64)
    z = two_party(fn, share(v, raw=True), share(v, seed=1, raw=True))
    assert np.array_equal(reconstruct(*z), v * v)


def test_file_dealer_rejects_garbage(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(FormatError):
        FileDealer(str(p), 0)


def test_comm_stats_report():
    st = CommStats()
    with st.measure("a", 4):
        st.on_bytes(100, 28)
        with st.measure("b"):
            st.on_bytes(0, 16)
    rows = {r["protocol"]: r for r in st.report()}
    assert rows["a"]["bytes_total"] == 144
    assert rows["a"]["comm_kb"] == pytest.approx(144 * 8 / 1024 / 4)
    assert rows["b"]["bytes_total"] == 16


def test_reveal_audit_and_test_flag():
    def fn(sess, x):
        sess.reveal(x, "debug")
        return sess.audit

    a0, _ = two_party(fn, share(np.ones(2)))
    assert a0.unsanctioned == 1
    with pytest.raises(ProtocolError):
        two_party(lambda s, x: s.reveal(x, "test"), share(np.ones(2)))
    assert RevealAudit.SANCTIONED == {"derive_architecture", "test"}


def test_session_rejects_bad_party():
    with pytest.raises(ValueError):
        Session(2, InProcessChannel.pair()[0])


def test_peer_failure_propagates():
    def fn(sess):
        if sess.party == 1:
            raise RuntimeError("boom")
        return sess.recv(Kind.OPEN)

    with pytest.raises(RuntimeError, match="boom"):
        run_pair(fn, timeout=5)


def test_transport_equivalence():
    a, b = transport_run("inprocess", n=64), transport_run("tcp", n=64)
    for i in (0, 1):
        assert a[i]["digest"] == b[i]["digest"]
        assert (a[i]["bytes_sent"], a[i]["bytes_received"]) == (b[i]["bytes_sent"], b[i]["bytes_received"])
        assert [r["bytes_total"] for r in a[i]["stats"]] == [r["bytes_total"] for r in b[i]["stats"]]
        assert np.array_equal(a[i]["output"], b[i]["output"])
