"""Deterministic, portable pseudo-random generator.

Seed stability is part of the decoding contract: the same session must
produce the same tokens across processes, machines, and local-vs-remote
backend placement. Platform RNGs make no such promise, so sampling,
shuffling, and parameter initialization all run on splitmix64. The exact
output sequence is pinned in docs/rng.md.
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1


class Splitmix64:
    """splitmix64 stream; the seed fully determines the output sequence."""

    __slots__ = ("_state",)

    def __init__(self, seed: int) -> None:
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def next_float(self) -> float:
        """Uniform double in [0, 1) built from the top 53 bits."""
        return (self.next_u64() >> 11) * 2.0**-53

    def next_below(self, n: int) -> int:
        """Integer in [0, n). Modulo bias is negligible for n << 2**64."""
        if n <= 0:
            raise ValueError("n must be positive")
        return self.next_u64() % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle driven by this stream."""
        for i in range(len(items) - 1, 0, -1):
            j = self.next_below(i + 1)
            items[i], items[j] = items[j], items[i]

    def uniform(self, low: float, high: float) -> float:
        return low + (high - low) * self.next_float()
