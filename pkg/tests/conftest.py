import numpy as np
import pytest

from ppnas.ring import DEFAULT, FixedPointConfig, decode, encode, make_shares, reconstruct
from ppnas.runtime import run_pair


def share(x, cfg: FixedPointConfig = DEFAULT, seed: int = 0, raw: bool = False):
    """Shares of a real array (or of raw ring values when ``raw``)."""
    rng = np.random.default_rng(seed)
    v = np.asarray(x) if raw else encode(x, cfg)
    return make_shares(v, rng, cfg)


def open_(pair, cfg: FixedPointConfig = DEFAULT, raw: bool = False):
    v = reconstruct(pair[0], pair[1], cfg)
    return v if raw else decode(v, cfg)


def two_party(fn, *inputs, cfg: FixedPointConfig = DEFAULT, seed: int = 0, **kw):
    """Run ``fn(sess, *party_inputs)`` on both parties; ``inputs`` are share pairs."""
    return run_pair(lambda s: fn(s, *(p[s.party] for p in inputs)), cfg=cfg, seed=seed, **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def acceptance(number: int, ok: bool, detail: str) -> None:
    """Record and print one pass/fail line; the test still asserts separately."""
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
