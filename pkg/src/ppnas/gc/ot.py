"""Oblivious transfer of wire labels.

Two modes share one interface:

``dealer``
    Beaver-style OT precomputation.  The dealer gives the sender random pads
    (m0, m1) and the receiver (c, m_c).  Online, the receiver sends
    e = b xor c; the sender answers (x0 xor m_e, x1 xor m_{1-e}).
``trusted``
    Test-only hand-off: the receiver sends its choice bits in the clear and
    the sender returns the chosen labels.  It exists to check protocol
    equivalence and must never be used with real data.
"""

from __future__ import annotations

import numpy as np

from ppnas.errors import ProtocolError
from ppnas.gc.garble import pack_labels, unpack_labels
from ppnas.runtime import Kind


def _pack_bits(bits: np.ndarray) -> bytes:
    return np.packbits(np.asarray(bits, dtype=bool), bitorder="little").tobytes()


def _unpack_bits(buf: bytes, n: int) -> np.ndarray:
    return np.unpackbits(np.frombuffer(buf, dtype=np.uint8), count=n, bitorder="little").astype(bool)


def ot_send(sess, x0: np.ndarray, x1: np.ndarray) -> None:
    """Sender side for n label pairs, each (n, 2) uint64."""
    n = x0.shape[0]
    if sess.ot_mode == "trusted":
        choice = _unpack_bits(sess.recv(Kind.OT), n)
        sess.send(Kind.OT, pack_labels(np.where(choice[:, None], x1, x0)))
        return
    if sess.ot_mode != "dealer":
        raise ProtocolError(f"unknown OT mode {sess.ot_mode!r}")
    corr = sess.dealer.ot(n)
    if corr.m0 is None:
        raise ProtocolError("receiver OT material handed to the sender")
    e = _unpack_bits(sess.recv(Kind.OT), n)[:, None]
    y0 = x0 ^ np.where(e, corr.m1, corr.m0)
    y1 = x1 ^ np.where(e, corr.m0, corr.m1)
    sess.send(Kind.OT, pack_labels(np.stack([y0, y1], axis=1)))


def ot_receive(sess, choice: np.ndarray) -> np.ndarray:
    """Receiver side; returns the chosen labels (n, 2)."""
    choice = np.asarray(choice, dtype=bool).reshape(-1)
    n = choice.size
    if sess.ot_mode == "trusted":
        sess.send(Kind.OT, _pack_bits(choice))
        return unpack_labels(sess.recv(Kind.OT), (n,))
    corr = sess.dealer.ot(n)
    if corr.choice is None:
        raise ProtocolError("sender OT material handed to the receiver")
    sess.send(Kind.OT, _pack_bits(choice ^ corr.choice))
    y = unpack_labels(sess.recv(Kind.OT), (n, 2))
    picked = np.where(choice[:, None], y[:, 1], y[:, 0])
    return picked ^ corr.mc


def ot_transfer(sess, pairs=None, choice=None):
    """Role-dispatching wrapper: party 0 passes ``pairs=(x0, x1)``, party 1 passes ``choice``."""
    if sess.party == 0:
        ot_send(sess, *pairs)
        return None
    return ot_receive(sess, choice)
