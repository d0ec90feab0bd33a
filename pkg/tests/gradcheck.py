"""Finite-difference probes shared by the gradient tests."""

import numpy as np


def directional_probes(F, x, g, n, h, rng):
    """Analytic vs 4-point central-difference directional derivatives along n random unit directions.

    ``x`` and ``g`` are dicts of arrays; ``F`` maps such a dict to a scalar.
    """
    keys = sorted(x)
    an, fd = [], []
    for _ in range(n):
        v = {k: rng.normal(size=np.shape(x[k])) for k in keys}
        norm = np.sqrt(sum(np.sum(v[k] ** 2) for k in keys))
        v = {k: v[k] / norm for k in keys}

        def at(t):
            return F({k: x[k] + t * v[k] for k in keys})

        fd.append((8 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12 * h))
        an.append(sum(np.sum(g[k] * v[k]) for k in keys))
    return np.array(an), np.array(fd)


def probe_error(an, fd):
    """Relative error of the probe vector: ||an - fd|| / ||fd||."""
    return float(np.linalg.norm(an - fd) / np.linalg.norm(fd))
