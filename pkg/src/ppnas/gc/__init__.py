"""Garbled-circuit engine: circuit builders, garbling, OT, two-party execution."""

from ppnas.gc.circuits import (
    Circuit,
    CircuitBuilder,
    build_add_circuit,
    build_clip_circuit,
    build_cmp_circuit,
    build_mux_circuit,
    build_relu_circuit,
    build_ring_cmp_circuit,
    from_bits,
    to_bits,
)
from ppnas.gc.garble import GarbledCircuit, decode_outputs, evaluate, garble
from ppnas.gc.ot import ot_transfer
from ppnas.gc.protocol import run_circuit

__all__ = [
    "Circuit", "CircuitBuilder", "GarbledCircuit", "build_add_circuit", "build_clip_circuit", "build_cmp_circuit",
    "build_mux_circuit", "build_relu_circuit", "build_ring_cmp_circuit", "decode_outputs", "evaluate",
    "from_bits", "garble", "ot_transfer", "run_circuit", "to_bits",
]
