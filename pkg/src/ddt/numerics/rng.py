"""Counter-based random streams."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MANTISSA = float(2**53)


@dataclass
class RngStream:
    """Deterministic stream keyed by ``seed``; ``counter`` counts values drawn so far.

    Draws come from a Philox generator positioned at ``counter``, so the same
    ``(seed, counter)`` pair reproduces the same values on any platform.
    """

    seed: int
    counter: int = 0

    def _generator(self) -> np.random.Generator:
        bitgen = np.random.Philox(key=int(self.seed) & (2**64 - 1))
        bitgen.advance(self.counter)
        return np.random.Generator(bitgen)

    def uniform_open(self, shape) -> np.ndarray:
        """Uniform draws on the open interval (0, 1)."""
        n = int(np.prod(shape)) if shape else 1
        bits = self._generator().integers(0, 2**53, size=n, dtype=np.int64)
        self.counter += n
        return ((bits.astype(np.float64) + 0.5) / _MANTISSA).reshape(shape)

    def normal(self, shape) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        out = self._generator().standard_normal(n)
        self.counter += n
        return out.reshape(shape)

    def split(self, offset: int) -> "RngStream":
        """Independent sub-stream, e.g. one per batch element."""
        return RngStream(seed=(self.seed * 1_000_003 + offset + 1) & (2**63 - 1), counter=self.counter)


def gumbel_from_uniform(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    return -np.log(-np.log(u))


def gumbel_draw(rng: RngStream, shape) -> np.ndarray:
    """Standard Gumbel noise ``-log(-log(u))``."""
    return gumbel_from_uniform(rng.uniform_open(shape))
