"""Running a garbled circuit between the two parties (S0 garbles, S1 evaluates)."""

from __future__ import annotations

import numpy as np

from ppnas.gc.circuits import TO_EVALUATOR, TO_GARBLER, Circuit
from ppnas.gc.garble import (
    decode_outputs,
    deserialize_tables,
    evaluate,
    garble,
    pack_labels,
    unpack_labels,
)
from ppnas.gc.ot import _pack_bits, _unpack_bits, ot_receive, ot_send
from ppnas.runtime import Kind

CHUNK = 4096


def run_circuit(sess, c: Circuit, n: int, bits: np.ndarray) -> np.ndarray:
    """Evaluate ``n`` instances of ``c``; ``bits`` are this party's input bits (n, width).

    Returns the (n, n_out) output bits visible to the caller; columns the caller
    may not see are left False.
    """
    bits = np.asarray(bits, dtype=bool).reshape(n, -1)
    out = np.zeros((n, len(c.outputs)), dtype=bool)
    for start in range(0, n, CHUNK):
        stop = min(n, start + CHUNK)
        fn = _garbler_chunk if sess.party == 0 else _evaluator_chunk
        out[start:stop] = fn(sess, c, stop - start, bits[start:stop], start)
    return out


def _garbler_chunk(sess, c: Circuit, n: int, bits: np.ndarray, offset: int) -> np.ndarray:
    g = garble(c, n, sess.rng, instance_offset=offset)
    ev_vis = (c.visibility & TO_EVALUATOR).astype(bool)
    payload = g.table_bytes() + pack_labels(g.garbler_labels(bits)) + _pack_bits(g.decode[:, ev_vis])
    sess.send(Kind.CIRCUIT, payload)
    x0, x1 = g.evaluator_pairs()
    ot_send(sess, x0.reshape(-1, 2), x1.reshape(-1, 2))
    result = np.zeros((n, len(c.outputs)), dtype=bool)
    g_vis = (c.visibility & TO_GARBLER).astype(bool)
    if g_vis.any():
        colours = _unpack_bits(sess.recv(Kind.LABELS), n * int(g_vis.sum())).reshape(n, -1)
        result[:, g_vis] = colours ^ g.decode[:, g_vis]
    return result


def _evaluator_chunk(sess, c: Circuit, n: int, bits: np.ndarray, offset: int) -> np.ndarray:
    msg = sess.recv(Kind.CIRCUIT)
    table_len = c.n_and * n * 4 * 24
    ng = len(c.garbler_inputs)
    ev_vis = (c.visibility & TO_EVALUATOR).astype(bool)
    tables = deserialize_tables(msg[:table_len], c.n_and, n)
    g_labels = unpack_labels(msg[table_len:table_len + 16 * n * ng], (n, ng))
    decode = np.zeros((n, len(c.outputs)), dtype=bool)
    decode[:, ev_vis] = _unpack_bits(msg[table_len + 16 * n * ng:], n * int(ev_vis.sum())).reshape(n, -1)
    e_labels = ot_receive(sess, bits.reshape(-1)).reshape(n, len(c.evaluator_inputs), 2)
    out_labels = evaluate(c, tables, g_labels, e_labels, instance_offset=offset)
    colours = (out_labels[..., 0] & np.uint64(1)).astype(bool)
    g_vis = (c.visibility & TO_GARBLER).astype(bool)
    if g_vis.any():
        sess.send(Kind.LABELS, _pack_bits(colours[:, g_vis]))
    result = np.zeros((n, len(c.outputs)), dtype=bool)
    result[:, ev_vis] = decode_outputs(out_labels, decode)[:, ev_vis]
    return result
