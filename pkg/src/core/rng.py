"""
Counter-based random streams
"""

from dataclasses import dataclass

import numpy as np

ALGORITHM = "philox4x64"
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream addressed by (seed, stream_index).

    Backed by numpy's Philox counter-based bit generator: the 128-bit key is
    built from the seed (low word) and the stream index (high word), so every
    pair maps to an independent sequence that is identical across platforms.
    """

    seed: int
    stream_index: int = 0
    algorithm: str = ALGORITHM

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of the stream"""
        key = (self.seed & _MASK64) | ((self.stream_index & _MASK64) << 64)
        return np.random.Generator(np.random.Philox(key=key))

    def substream(self, index: int) -> "RngStream":
        """Derive an independent child stream.

        The child seed mixes the parent seed, the parent stream index and
        `index`, so children of one parent carry distinct seeds on their own.
        """
        mixed = np.random.SeedSequence([self.seed & _MASK64, self.stream_index & _MASK64, index & _MASK64])
        child_seed = int(mixed.generate_state(2, dtype=np.uint64)[0])
        return RngStream(seed=child_seed, stream_index=index)
