"""Deterministic, splittable random streams.

Every random draw in the library flows through an :class:`RngStream`, which
wraps a counter-based Philox generator keyed by ``(seed, stream_id)``.
Substreams are derived from names and integers alone, never from draw state,
so the stream consumed for one purpose (say, sampling hidden units of example
17 in epoch 3) is a pure function of the run seed and those labels. This is
what makes results independent of batch order and lets a particle count M' be
a strict prefix of the draws for any M >= M'.
"""

from __future__ import annotations

from typing import Union

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def _splitmix64(z: int) -> int:
    """One round of the splitmix64 mixer; full-period permutation of u64."""
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def _hash_key(key: Union[int, str]) -> int:
    # Python's builtin hash() is salted per process; FNV-1a is stable.
    if isinstance(key, (int, np.integer)):
        return int(key) & _MASK64
    if isinstance(key, str):
        h = _FNV_OFFSET
        for byte in key.encode("utf-8"):
            h = ((h ^ byte) * _FNV_PRIME) & _MASK64
        return h
    raise TypeError(f"substream key must be int or str, got {type(key).__name__!s}")


class RngStream:
    """A named random stream with deterministic child derivation.

    Two streams built with the same ``(seed, stream_id)`` produce identical
    draw sequences. ``substream(*keys)`` maps the parent identity plus the
    keys to a child identity through splitmix64 mixing; it does not advance
    or read the parent's generator, so derivation order is irrelevant.
    """

    __slots__ = ("seed", "stream_id", "_gen")

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        self._gen = None

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"

    @property
    def generator(self) -> np.random.Generator:
        """The underlying numpy Generator, created lazily."""
        if self._gen is None:
            key = np.array([self.seed, self.stream_id], dtype=np.uint64)
            self._gen = np.random.Generator(np.random.Philox(key=key))
        return self._gen

    def substream(self, *keys: Union[int, str]) -> "RngStream":
        """Derive a child stream from one or more labels.

        Labels may be ints (example indices, epochs, particle blocks) or
        strings (purpose tags like "init" or "shuffle").
        """
        if not keys:
            raise ValueError("substream requires at least one key")
        sid = self.stream_id
        for key in keys:
            sid = _splitmix64(sid ^ _splitmix64(_hash_key(key)))
        return RngStream(self.seed, sid)

    # Draw helpers. All return float64 / int64 as numpy defaults dictate.

    def uniform(self, size=None) -> np.ndarray:
        """U[0, 1) floats."""
        return self.generator.random(size)

    def normal(self, size=None, scale: float = 1.0) -> np.ndarray:
        return self.generator.normal(0.0, scale, size)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        return self.generator.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def choice(self, n: int, size=None, replace: bool = True) -> np.ndarray:
        return self.generator.choice(n, size=size, replace=replace)


def bernoulli(p: np.ndarray, rng: RngStream) -> np.ndarray:
    """Sample Bernoulli(p) elementwise, one uniform per element.

    Returns float64 zeros/ones of p's shape. Because draws are u < p with
    u in [0, 1), p = 0 never fires and p = 1 always fires.
    """
    p = np.asarray(p, dtype=np.float64)
    if p.size and (np.min(p) < 0.0 or np.max(p) > 1.0):
        raise ValueError("bernoulli probabilities must lie in [0, 1]")
    u = rng.uniform(p.shape)
    return (u < p).astype(np.float64)
