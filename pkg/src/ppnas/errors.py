"""Exception hierarchy shared by every layer of the toolkit."""


class MPCError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class ConfigError(MPCError, ValueError):
    exit_code = 2


class RangeError(ConfigError):
    """A cleartext value does not fit the fixed-point range."""


class HandshakeError(ConfigError):
    """Peers disagree on protocol version or ring parameters."""


class FormatError(MPCError, ValueError):
    """A file (IDX, dealer, checkpoint) has the wrong layout."""

    exit_code = 2


class TransportError(MPCError):
    exit_code = 3


class ProtocolError(MPCError):
    """Protocol misuse, e.g. consuming correlated randomness twice."""

    exit_code = 3


class CorruptCircuitError(ProtocolError):
    """A garbled row failed authentication during evaluation."""


class NumericError(MPCError, ArithmeticError):
    exit_code = 4


class FixedPointOverflow(NumericError, OverflowError):
    pass
