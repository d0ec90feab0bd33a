import numpy as np
import pytest

from conftest import two_party
from ppnas.errors import CorruptCircuitError, FormatError
from ppnas.gc.circuits import build_add_circuit, build_cmp_circuit, from_bits, to_bits
from ppnas.gc.garble import (
    ROW_BYTES,
    TAG_BYTES,
    decode_outputs,
    deserialize_tables,
    evaluate,
    garble,
    try_row,
)
from ppnas.gc.ot import ot_receive, ot_send
from ppnas.gc.protocol import run_circuit


def _garbled_run(c, g_bits, e_bits, seed=0):
    n = g_bits.shape[0]
    gc = garble(c, n, np.random.default_rng(seed))
    x0, x1 = gc.evaluator_pairs()
    e_lab = np.where(e_bits[..., None], x1, x0)
    out = evaluate(c, gc.tables, gc.garbler_labels(g_bits), e_lab)
    return gc, decode_outputs(out, gc.decode)


def test_garbled_add_matches_plain():
    rng = np.random.default_rng(0)
    x, y = rng.integers(0, 2**16, 500), rng.integers(0, 2**16, 500)
    c = build_add_circuit(16)
    _, bits = _garbled_run(c, to_bits(x, 16), to_bits(y, 16))
    assert np.array_equal(from_bits(bits).astype(np.int64), (x + y) % 2**16)


def test_free_xor_offset_has_colour_bit():
    gc = garble(build_add_circuit(4), 3, np.random.default_rng(1))
    assert int(gc.R[0]) & 1 == 1
    assert gc.tables.shape == (3, 4, 3, 3)


def test_tampered_row_is_detected():
    c = build_cmp_circuit(8)
    rng = np.random.default_rng(2)
    g, e = to_bits(rng.integers(0, 256, 10), 8), to_bits(rng.integers(0, 256, 10), 8)
    gc = garble(c, 10, rng)
    x0, x1 = gc.evaluator_pairs()
    e_lab = np.where(e[..., None], x1, x0)
    bad = gc.tables.copy()
    bad[:, :, 2] ^= np.uint64(1)   # flip one bit of every tag
    with pytest.raises(CorruptCircuitError):
        evaluate(c, bad, gc.garbler_labels(g), e_lab)


def test_only_one_row_authenticates():
    c = build_cmp_circuit(4)
    rng = np.random.default_rng(3)
    gc = garble(c, 64, rng)
    # gate 0 is an AND on input wires; the evaluator holds one label per wire
    a = gc.garbler_labels(np.zeros((64, 4), bool))[:, 0]
    b = gc.evaluator_pairs()[0][:, 0]
    ok = np.stack([try_row(gc.tables, 0, r, a, b) for r in range(4)])
    assert np.all(ok.sum(axis=0) == 1)


def test_table_serialization_roundtrip():
    gc = garble(build_add_circuit(8), 5, np.random.default_rng(4))
    buf = gc.table_bytes()
    assert len(buf) == 7 * 4 * 5 * (ROW_BYTES + TAG_BYTES)
    assert np.array_equal(deserialize_tables(buf, 7, 5), gc.tables)
    with pytest.raises(FormatError):
        deserialize_tables(buf[:-1], 7, 5)


@pytest.mark.parametrize("mode", ["dealer", "trusted"])
def test_oblivious_transfer(mode):
    rng = np.random.default_rng(5)
    x0, x1 = rng.integers(0, 2**63, (100, 2), dtype=np.int64), rng.integers(0, 2**63, (100, 2), dtype=np.int64)
    x0, x1 = x0.astype(np.uint64), x1.astype(np.uint64)
    choice = rng.integers(0, 2, 100).astype(bool)

    def fn(sess):
        if sess.party == 0:
            return ot_send(sess, x0, x1)
        return ot_receive(sess, choice)

    _, got = two_party(fn, ot_mode=mode)
    assert np.array_equal(got, np.where(choice[:, None], x1, x0))


def test_run_circuit_two_parties_chunks():
    c = build_add_circuit(8)
    rng = np.random.default_rng(6)
    n = 5000   # spans two chunks
    x, y = rng.integers(0, 256, n), rng.integers(0, 256, n)

    def fn(sess):
        return run_circuit(sess, c, n, to_bits(x if sess.party == 0 else y, 8))

    g_out, e_out = two_party(fn)
    assert np.array_equal(from_bits(e_out).astype(np.int64), (x + y) % 256)
    assert np.array_equal(g_out, e_out)   # ADD outputs are visible to both
