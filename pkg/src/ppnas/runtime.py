"""Two-party runtime: message framing, transports, dealer, sessions, accounting.

Wire format of one message::

    u32 length (little-endian, = len(payload) + 2) | u8 tag | u8 kind | payload

Each channel hashes the frames it sends into a running transcript digest
(optionally keeping the frames themselves) and sessions count bytes per named
sub-protocol for the benchmark tables.
"""

from __future__ import annotations

import contextlib
import hashlib
import json
import os
import queue
import socket
import struct
import threading
import time
from collections import defaultdict
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Any, BinaryIO, Callable

import numpy as np

from ppnas.errors import FormatError, HandshakeError, MPCError, ProtocolError, TransportError
from ppnas.ring import (
    DEFAULT,
    U64,
    BeaverTriple,
    FixedPointConfig,
    make_triple_pair,
    pack_ring,
    read_triples,
    reconstruct,
    unpack_ring,
    write_triples,
)

PROTOCOL_VERSION = 1
DEFAULT_TIMEOUT = 30.0
_HEADER = struct.Struct("<IBB")


class Kind(IntEnum):
    OPEN = 0
    CIRCUIT = 1
    LABELS = 2
    OT = 3
    CONTROL = 4


def frame(tag: int, kind: int, payload: bytes) -> bytes:
    return _HEADER.pack(len(payload) + 2, tag, kind) + payload


def unframe(buf: bytes) -> tuple[int, int, bytes]:
    if len(buf) < _HEADER.size:
        raise FormatError("short frame")
    length, tag, kind = _HEADER.unpack_from(buf)
    if length != len(buf) - 4:
        raise FormatError(f"frame length {length} does not match {len(buf) - 4}")
    return tag, kind, buf[_HEADER.size:]


# ---------------------------------------------------------------------------
# Transports


class Channel:
    """One endpoint of a duplex, tag-multiplexed, in-order message stream."""

    def __init__(self, timeout: float = DEFAULT_TIMEOUT):
        self.timeout = timeout
        self.record = False
        self.transcript: list[bytes] = []
        self._digest = hashlib.sha256()
        self.bytes_sent = 0
        self.bytes_received = 0
        self._pending: dict[int, list[tuple[int, bytes]]] = defaultdict(list)
        self._listeners: list[Callable[[int, int], None]] = []

    def send(self, kind: int, payload: bytes, tag: int = 0) -> None:
        data = frame(tag, kind, payload)
        self._digest.update(data)
        if self.record:
            self.transcript.append(data)
        self.bytes_sent += len(data)
        for cb in self._listeners:
            cb(len(data), 0)
        self._send_frame(data)

    def recv(self, tag: int = 0) -> tuple[int, bytes]:
        while not self._pending[tag]:
            data = self._recv_frame()
            self.bytes_received += len(data)
            for cb in self._listeners:
                cb(0, len(data))
            t, k, p = unframe(data)
            self._pending[t].append((k, p))
        return self._pending[tag].pop(0)

    def recv_kind(self, kind: int, tag: int = 0) -> bytes:
        k, payload = self.recv(tag)
        if k != kind:
            raise ProtocolError(f"expected message kind {Kind(kind).name}, got {Kind(k).name}")
        return payload

    @property
    def transcript_digest(self) -> str:
        """sha256 over every frame sent so far."""
        return self._digest.hexdigest()

    def close(self) -> None:
        pass

    def _send_frame(self, data: bytes) -> None:
        raise NotImplementedError

    def _recv_frame(self) -> bytes:
        raise NotImplementedError


_CLOSED = object()


class InProcessChannel(Channel):
    def __init__(self, inbox: queue.Queue, outbox: queue.Queue, timeout: float = DEFAULT_TIMEOUT):
        super().__init__(timeout)
        self._inbox = inbox
        self._outbox = outbox

    @classmethod
    def pair(cls, timeout: float = DEFAULT_TIMEOUT) -> tuple["InProcessChannel", "InProcessChannel"]:
        q01, q10 = queue.Queue(), queue.Queue()
        return cls(q10, q01, timeout), cls(q01, q10, timeout)

    def _send_frame(self, data: bytes) -> None:
        self._outbox.put(data)

    def _recv_frame(self) -> bytes:
        try:
            data = self._inbox.get(timeout=self.timeout)
        except queue.Empty:
            raise TransportError(f"no message from peer within {self.timeout}s") from None
        if data is _CLOSED:
            raise TransportError("peer closed the channel")
        return data

    def close(self) -> None:
        self._outbox.put(_CLOSED)


class TcpChannel(Channel):
    def __init__(self, sock: socket.socket, timeout: float = DEFAULT_TIMEOUT):
        super().__init__(timeout)
        self.sock = sock
        sock.settimeout(timeout)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    @classmethod
    def listen(cls, host: str, port: int, timeout: float = DEFAULT_TIMEOUT, ready: threading.Event | None = None):
        srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        srv.bind((host, port))
        srv.listen(1)
        srv.settimeout(timeout)
        if ready is not None:
            ready.port = srv.getsockname()[1]
            ready.set()
        try:
            conn, _ = srv.accept()
        except OSError as exc:
            raise TransportError(f"accept on {host}:{port} failed: {exc}") from exc
        finally:
            srv.close()
        return cls(conn, timeout)

    @classmethod
    def connect(cls, host: str, port: int, timeout: float = DEFAULT_TIMEOUT, retries: int = 50):
        last = None
        for _ in range(retries):
            try:
                return cls(socket.create_connection((host, port), timeout=timeout), timeout)
            except OSError as exc:
                last = exc
                time.sleep(0.1)
        raise TransportError(f"cannot connect to {host}:{port}: {last}")

    def _send_frame(self, data: bytes) -> None:
        try:
            self.sock.sendall(data)
        except OSError as exc:
            raise TransportError(f"send failed: {exc}") from exc

    def _read_exact(self, n: int) -> bytes:
        buf = bytearray()
        while len(buf) < n:
            try:
                chunk = self.sock.recv(n - len(buf))
            except OSError as exc:
                raise TransportError(f"recv failed: {exc}") from exc
            if not chunk:
                raise TransportError("peer closed the connection")
            buf += chunk
        return bytes(buf)

    def _recv_frame(self) -> bytes:
        head = self._read_exact(4)
        (length,) = struct.unpack("<I", head)
        return head + self._read_exact(length)

    def close(self) -> None:
        with contextlib.suppress(OSError):
            self.sock.close()


# ---------------------------------------------------------------------------
# Accounting


@dataclass
class ProtocolCost:
    bytes_sent: int = 0
    bytes_received: int = 0
    count: int = 0
    seconds: float = 0.0

    @property
    def total_bytes(self) -> int:
        return self.bytes_sent + self.bytes_received


class CommStats:
    """Per sub-protocol byte counters and wall-clock, attributed to every open scope."""

    def __init__(self):
        self.costs: dict[str, ProtocolCost] = defaultdict(ProtocolCost)
        self._active: list[str] = []

    def on_bytes(self, sent: int, received: int) -> None:
        for name in self._active:
            c = self.costs[name]
            c.bytes_sent += sent
            c.bytes_received += received

    @contextlib.contextmanager
    def measure(self, name: str, count: int = 1):
        self._active.append(name)
        start = time.perf_counter()
        try:
            yield self.costs[name]
        finally:
            self._active.remove(name)
            c = self.costs[name]
            c.seconds += time.perf_counter() - start
            c.count += count

    def record(self, name: str, nbytes: int, duration: float, count: int = 1) -> None:
        c = self.costs[name]
        c.bytes_sent += nbytes
        c.seconds += duration
        c.count += count

    def report(self) -> list[dict[str, Any]]:
        """Rows of (protocol, Kb per invocation, seconds per invocation)."""
        rows = []
        for name, c in self.costs.items():
            if c.count == 0:
                continue
            rows.append({
                "protocol": name,
                "invocations": c.count,
                "comm_kb": c.total_bytes * 8 / 1024 / c.count,
                "time_s": c.seconds / c.count,
                "bytes_total": c.total_bytes,
            })
        return rows


# ---------------------------------------------------------------------------
# Dealer


@dataclass
class OTCorrelation:
    """Random-OT material: sender holds (m0, m1); receiver holds (c, m_c)."""

    m0: np.ndarray | None = None
    m1: np.ndarray | None = None
    choice: np.ndarray | None = None
    mc: np.ndarray | None = None


def _ot_pair(rng: np.random.Generator, n: int) -> tuple[OTCorrelation, OTCorrelation]:
    m = rng.integers(0, np.iinfo(np.uint64).max, size=(2, n, 2), dtype=U64, endpoint=True)
    c = rng.integers(0, 2, size=n, dtype=np.uint8).astype(bool)
    mc = np.where(c[:, None], m[1], m[0])
    return OTCorrelation(m0=m[0], m1=m[1]), OTCorrelation(choice=c, mc=mc)


class SeededDealer:
    """Deterministic stand-in for the offline trusted dealer.

    Request ``k`` is generated from ``(seed, k)`` so two processes holding the
    same seed hand matching halves to their party without talking.  Each view
    discards the other party's half, but both halves are computed locally: this
    is a test and desk-benchmark harness, not a security boundary.
    """

    def __init__(self, seed: int, party: int):
        self.seed = seed
        self.party = party
        self.requests = 0

    def _rng(self, kind: int) -> np.random.Generator:
        k = self.requests
        self.requests += 1
        return np.random.default_rng([self.seed & (2**64 - 1), kind, k])

    def triple(self, shape_a, shape_b, op: str, cfg: FixedPointConfig) -> BeaverTriple:
        pair = make_triple_pair(self._rng(1), shape_a, shape_b, op, cfg)
        return pair[self.party]

    def ot(self, n: int) -> OTCorrelation:
        return _ot_pair(self._rng(2), n)[self.party]


OT_MAGIC = b"MPCO"
OT_VERSION = 1
_OT_HEADER = struct.Struct("<4sHBQ")


class FileDealer:
    """Reads one party's dealer file: MPCT triple sections plus an MPCO section.

    Only scalar elementwise triples and OT correlations are stored in files;
    shaped requests are served by slicing the pools.  Every record is consumed
    at most once.
    """

    def __init__(self, path: str, party: int):
        self.party = party
        self.triples: dict[int, list[np.ndarray]] = {}
        self.tpos: dict[int, int] = {}
        self.ot_pool: OTCorrelation | None = None
        self.opos = 0
        with open(path, "rb") as fh:
            while True:
                peek = fh.read(4)
                if not peek:
                    break
                fh.seek(-len(peek), os.SEEK_CUR)
                if peek == b"MPCT":
                    l, a, b, c = read_triples(fh)
                    self.triples[l] = [a, b, c]
                    self.tpos[l] = 0
                elif peek == OT_MAGIC:
                    self.ot_pool = read_ot(fh)
                else:
                    raise FormatError(f"unknown dealer section {peek!r} at offset {fh.tell()}")

    def triple(self, shape_a, shape_b, op: str, cfg: FixedPointConfig) -> BeaverTriple:
        if op != "mul" or tuple(shape_a) != tuple(shape_b):
            raise ProtocolError("file dealer only serves same-shape elementwise triples")
        pool = self.triples.get(cfg.l)
        if pool is None:
            raise ProtocolError(f"dealer file has no triples for l={cfg.l}")
        n = int(np.prod(shape_a, dtype=np.int64))
        start = self.tpos[cfg.l]
        if start + n > pool[0].size:
            raise ProtocolError(f"triple pool exhausted for l={cfg.l}: need {n}, {pool[0].size - start} left")
        self.tpos[cfg.l] = start + n
        a, b, c = (v[start:start + n].reshape(shape_a) for v in pool)
        return BeaverTriple(a, b, c, "mul")

    def ot(self, n: int) -> OTCorrelation:
        p = self.ot_pool
        if p is None:
            raise ProtocolError("dealer file has no OT correlations")
        size = (p.m0 if p.m0 is not None else p.mc).shape[0]
        if self.opos + n > size:
            raise ProtocolError(f"OT pool exhausted: need {n}, {size - self.opos} left")
        s = slice(self.opos, self.opos + n)
        self.opos += n
        if p.m0 is not None:
            return OTCorrelation(m0=p.m0[s], m1=p.m1[s])
        return OTCorrelation(choice=p.choice[s], mc=p.mc[s])


def write_ot(fh: BinaryIO, corr: OTCorrelation, role: int) -> None:
    n = (corr.m0 if role == 0 else corr.mc).shape[0]
    fh.write(_OT_HEADER.pack(OT_MAGIC, OT_VERSION, role, n))
    if role == 0:
        fh.write(np.concatenate([corr.m0, corr.m1], axis=1).astype("<u8").tobytes())
    else:
        fh.write(corr.choice.astype(np.uint8).tobytes())
        fh.write(corr.mc.astype("<u8").tobytes())


def read_ot(fh: BinaryIO) -> OTCorrelation:
    head = fh.read(_OT_HEADER.size)
    if len(head) != _OT_HEADER.size:
        raise FormatError("truncated OT header")
    magic, version, role, n = _OT_HEADER.unpack(head)
    if magic != OT_MAGIC or version != OT_VERSION:
        raise FormatError(f"bad OT section header {magic!r} v{version}")
    if role == 0:
        body = fh.read(32 * n)
        if len(body) != 32 * n:
            raise FormatError("OT section truncated")
        m = np.frombuffer(body, dtype="<u8").reshape(n, 4).astype(U64)
        return OTCorrelation(m0=m[:, :2].copy(), m1=m[:, 2:].copy())
    choice = np.frombuffer(fh.read(n), dtype=np.uint8).astype(bool)
    body = fh.read(16 * n)
    if choice.size != n or len(body) != 16 * n:
        raise FormatError("OT section truncated")
    return OTCorrelation(choice=choice, mc=np.frombuffer(body, dtype="<u8").reshape(n, 2).astype(U64))


def dealer_generate(counts: dict[int, int], ot_count: int, seed: int, paths: tuple[str, str]) -> None:
    """Write both parties' dealer files: one triple section per ring width, one OT section.

    ``counts`` maps ring width ``l`` to the number of scalar triples.
    """
    if any(n <= 0 for n in counts.values()) or ot_count < 0:
        raise MPCError("dealer counts must be positive")
    rng = np.random.default_rng(seed)
    handles = [open(p, "wb") for p in paths]
    try:
        for l in sorted(counts):
            cfg = FixedPointConfig(l=l, f=min(DEFAULT.f, l - 1))
            t0, t1 = make_triple_pair(rng, (counts[l],), (counts[l],), "mul", cfg)
            write_triples(handles[0], l, t0.a, t0.b, t0.c)
            write_triples(handles[1], l, t1.a, t1.b, t1.c)
        if ot_count:
            snd, rcv = _ot_pair(rng, ot_count)
            write_ot(handles[0], snd, 0)
            write_ot(handles[1], rcv, 1)
    finally:
        for h in handles:
            h.close()


# ---------------------------------------------------------------------------
# Sessions


class RevealAudit:
    """Counts reconstructions of secret values; only sanctioned reasons are allowed."""

    SANCTIONED = frozenset({"derive_architecture", "test"})

    def __init__(self):
        self.counts: dict[str, int] = defaultdict(int)

    def note(self, reason: str) -> None:
        self.counts[reason] += 1

    @property
    def unsanctioned(self) -> int:
        return sum(n for r, n in self.counts.items() if r not in self.SANCTIONED)


def env_seed(seed: int) -> int:
    """MPC_SEED overrides configured seeds (CI reproducibility)."""
    override = os.environ.get("MPC_SEED")
    return int(override) if override else seed


@dataclass
class Session:
    """One party's end of a protocol conversation."""

    party: int
    channel: Channel
    cfg: FixedPointConfig = DEFAULT
    dealer: Any = None
    seed: int = 0
    ot_mode: str = "dealer"
    test_reveal: bool = False
    stats: CommStats = field(default_factory=CommStats)
    audit: RevealAudit = field(default_factory=RevealAudit)

    def __post_init__(self):
        if self.party not in (0, 1):
            raise ValueError("party must be 0 or 1")
        if self.dealer is None:
            self.dealer = SeededDealer(self.seed, self.party)
        self.rng = np.random.default_rng([self.seed & (2**64 - 1), 7919, self.party])
        self.channel._listeners.append(self.stats.on_bytes)

    @property
    def is_garbler(self) -> bool:
        return self.party == 0

    def measure(self, name: str, count: int = 1):
        return self.stats.measure(name, count)

    def send(self, kind: int, payload: bytes, tag: int = 0) -> None:
        self.channel.send(kind, payload, tag)

    def recv(self, kind: int, tag: int = 0) -> bytes:
        return self.channel.recv_kind(kind, tag)

    def exchange(self, kind: int, payload: bytes, tag: int = 0) -> bytes:
        """Swap one message with the peer; party 0 speaks first (no send/send deadlock on TCP)."""
        if self.party == 0:
            self.send(kind, payload, tag)
            return self.recv(kind, tag)
        other = self.recv(kind, tag)
        self.send(kind, payload, tag)
        return other

    def open_masked(self, arrays: list[np.ndarray]) -> list[np.ndarray]:
        """Open values that are already masked by fresh randomness (Beaver openings)."""
        payload = b"".join(pack_ring(a, self.cfg) for a in arrays)
        other = self.exchange(Kind.OPEN, payload)
        out, pos = [], 0
        for a in arrays:
            n = a.size * self.cfg.nbytes
            peer = unpack_ring(other[pos:pos + n], a.shape, self.cfg)
            out.append(reconstruct(a, peer, self.cfg))
            pos += n
        return out

    def reveal(self, share: np.ndarray, reason: str) -> np.ndarray:
        """Jointly reconstruct a secret value; every call is audited."""
        if reason == "test" and not self.test_reveal:
            raise ProtocolError("test reveal requested without the session test flag")
        self.audit.note(reason)
        share = np.asarray(share, dtype=U64)
        return self.open_masked([share])[0]

    def close(self) -> None:
        self.channel.close()


def seed_commitment(seed: int) -> str:
    return hashlib.sha256(f"ppnas-seed:{seed}".encode()).hexdigest()


def handshake(sess: Session) -> None:
    """Exchange version, ring parameters and seed commitment; abort on mismatch."""
    mine = {"version": PROTOCOL_VERSION, "l": sess.cfg.l, "f": sess.cfg.f, "seed": seed_commitment(sess.seed)}
    theirs = json.loads(sess.exchange(Kind.CONTROL, json.dumps(mine, sort_keys=True).encode()))
    for key in ("version", "l", "f", "seed"):
        if theirs.get(key) != mine[key]:
            raise HandshakeError(f"handshake mismatch on {key!r}: local {mine[key]!r}, peer {theirs.get(key)!r}")


def connect(role: int, transport: str = "inprocess", *, channel: Channel | None = None, address: str = "127.0.0.1",
            port: int = 0, listen: bool | None = None, cfg: FixedPointConfig = DEFAULT, seed: int = 0,
            timeout: float = DEFAULT_TIMEOUT, ready: threading.Event | None = None, **kw) -> Session:
    """Open a session for ``role`` and run the handshake.

    ``transport="inprocess"`` needs a ready ``channel`` (see InProcessChannel.pair);
    ``"tcp"`` listens when ``listen`` is true (default: role 0) and connects otherwise;
    a listener given ``ready`` sets ``ready.port`` and the event once bound (useful with port 0).
    """
    seed = env_seed(seed)
    if transport == "inprocess":
        if channel is None:
            raise ValueError("in-process transport needs a channel")
        ch = channel
    elif transport == "tcp":
        do_listen = (role == 0) if listen is None else listen
        ch = TcpChannel.listen(address, port, timeout, ready) if do_listen else TcpChannel.connect(address, port, timeout)
    else:
        raise ValueError(f"unknown transport {transport!r}")
    sess = Session(role, ch, cfg=cfg, seed=seed, **kw)
    try:
        handshake(sess)
    except Exception:
        ch.close()
        raise
    return sess


def run_pair(fn: Callable[[Session], Any], *, cfg: FixedPointConfig = DEFAULT, seed: int = 0,
             sessions: tuple[Session, Session] | None = None, timeout: float = DEFAULT_TIMEOUT, **kw):
    """Run ``fn(session)`` for both parties concurrently over an in-process channel.

    Party 1 runs in a worker thread.  Returns ``(result0, result1)``; an error in
    either party closes its channel end and is re-raised here.
    """
    if sessions is None:
        c0, c1 = InProcessChannel.pair(timeout)
        sessions = (Session(0, c0, cfg=cfg, seed=seed, **kw), Session(1, c1, cfg=cfg, seed=seed, **kw))
    results: list[Any] = [None, None]
    errors: list[BaseException | None] = [None, None]

    def target(i):
        try:
            results[i] = fn(sessions[i])
        except BaseException as exc:  # noqa: BLE001 - propagated to caller
            errors[i] = exc
            sessions[i].close()

    worker = threading.Thread(target=target, args=(1,), daemon=True)
    worker.start()
    target(0)
    worker.join()
    for exc in errors:
        if exc is not None and not isinstance(exc, TransportError):
            raise exc
    for exc in errors:
        if exc is not None:
            raise exc
    return results[0], results[1]
