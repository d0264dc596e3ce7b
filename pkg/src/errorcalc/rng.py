"""Deterministic random streams.

Every stochastic routine takes one integer root seed.  Sub-streams are derived
from ``(root, index...)`` through :class:`numpy.random.SeedSequence`, which
hashes the pair, so the draws for replication ``i`` never depend on how
replications are split across workers.
"""

from __future__ import annotations

import numpy as np


def derive(root: int, *index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(root) & (2**64 - 1), spawn_key=tuple(int(i) for i in index))


def stream(root: int, *index: int) -> np.random.Generator:
    """Generator for sub-stream ``index`` of ``root``."""
    return np.random.Generator(np.random.PCG64(derive(root, *index)))
