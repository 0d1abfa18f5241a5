"""Named, splittable random streams on a counter-based generator.

Every source of randomness in this package draws from an RngStream.  A
stream is addressed by a (name, seed) pair; the draw sequence depends only
on that pair, never on how many other streams exist or in what order they
were created.  Child streams are derived by name, so rearranging unrelated
code cannot silently shift the randomness of a run.
"""

from __future__ import annotations

import hashlib

import numpy as np


class RngStream:
    def __init__(self, name: str, seed: int):
        self.name = str(name)
        self.seed = int(seed)
        digest = hashlib.sha256(f"{self.seed}:{self.name}".encode("utf-8")).digest()
        # 128-bit Philox key from the (seed, name) digest
        key = int.from_bytes(digest[:16], "little")
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def split(self, name: str) -> "RngStream":
        """Derive an independent child stream; does not advance this one."""
        return RngStream(f"{self.name}/{name}", self.seed)

    def normal(self, shape, std: float = 1.0) -> np.ndarray:
        return self._gen.normal(0.0, std, size=shape)

    def uniform(self, shape) -> np.ndarray:
        return self._gen.random(size=shape)

    def integers(self, low: int, high: int, size=None):
        """Draw from [low, high), matching numpy's half-open convention."""
        return self._gen.integers(low, high, size=size)

    def choice(self, seq):
        return seq[int(self._gen.integers(0, len(seq)))]

    def coin(self, p: float = 0.5) -> bool:
        return bool(self._gen.random() < p)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def shuffled(self, seq: list) -> list:
        return [seq[i] for i in self.permutation(len(seq))]

    def __repr__(self) -> str:
        return f"RngStream(name={self.name!r}, seed={self.seed})"
