"""Two-party secure computation toolkit for privacy-preserving architecture search."""

from ppnas.ring import FixedPointConfig, decode, encode, make_shares, reconstruct

__version__ = "0.1.0"

__all__ = ["FixedPointConfig", "encode", "decode", "make_shares", "reconstruct"]
