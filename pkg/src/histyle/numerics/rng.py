"""Seeded randomness with named stream splitting.

Philox is counter-based, so streams derived from the same seed but different
labels are independent, and the same (seed, labels) pair always reproduces the
same draw sequence on any platform.
"""

import zlib

import numpy as np

ALGORITHM = "philox4x64"
_MASK64 = (1 << 64) - 1


def _label_key(label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label) & 0xFFFFFFFF
    return zlib.crc32(str(label).encode("utf-8"))


class Rng:
    """Root seed plus `stream(*labels)` derivation of independent generators."""

    algorithm = ALGORITHM

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64

    def stream(self, *labels) -> np.random.Generator:
        key = tuple(_label_key(l) for l in labels)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=key)
        return np.random.Generator(np.random.Philox(ss))

    def __repr__(self):
        return f"Rng(seed={self.seed}, algorithm={self.algorithm!r})"
