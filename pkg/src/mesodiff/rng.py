"""Counter-style seed splitting.

Every stochastic work item (a trial, a run, a realization) gets its own
generator derived from the master seed and its index path, so results do not
depend on execution order.
"""
import numpy as np


def stream(seed, *path):
    """Return an independent ``Generator`` for ``(seed, *path)``."""
    key = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(p) for p in path]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))


def streams(seed, count, *prefix):
    return [stream(seed, *prefix, i) for i in range(count)]
