"""Portable deterministic randomness.

Every random decision in the benchmark flows through one construction so
that runs are reproducible across processes, platforms, and the two kernel
backends:

* SplitMix64 is used as the mixing/finalizing function (``mix64``) and to
  expand a stream key into xoshiro256** state words.
* xoshiro256** generates the actual 64-bit draws.
* Streams are *blocked*: draw ``i`` of a stream belongs to block
  ``i // BLOCK``, and each block runs its own xoshiro256** instance seeded
  from ``mix64(key, block_index)``.  Blocking makes bulk generation
  embarrassingly parallel, so the numpy and numba backends can produce
  bit-identical output (see :mod:`permubench.kernels`).

Stream keys are derived with ``mix64(seed, tag("purpose"), ...)`` where
tags are FNV-1a hashes of short strings ("init", "subset", "shuffle", a
corruption kind, a parameter name).
"""

from __future__ import annotations

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15

# Stream block length; part of the generator definition, do not change.
BLOCK = 1024

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a64(data: str | bytes) -> int:
    """64-bit FNV-1a hash, used to turn tag strings into stream salts."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & MASK64
    return h


def splitmix_mix(z: int) -> int:
    """SplitMix64 output function (finalizer)."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def splitmix_next(state: int) -> tuple[int, int]:
    """One SplitMix64 step; returns (value, new_state)."""
    state = (state + GOLDEN) & MASK64
    return splitmix_mix(state), state


def mix64(*parts: int) -> int:
    """Combine integers into one well-mixed 64-bit stream key."""
    if not parts:
        raise ValueError("mix64 needs at least one value")
    acc = 0
    for p in parts:
        acc = (acc + GOLDEN) & MASK64
        acc = splitmix_mix(acc ^ (p & MASK64))
    return acc


def tag(name: str) -> int:
    """Salt for a named stream purpose."""
    return fnv1a64(name)


def block_state(key: int, block: int) -> list[int]:
    """xoshiro256** state words for one block of a stream."""
    seed = mix64(key, block)
    words = []
    for _ in range(4):
        value, seed = splitmix_next(seed)
        words.append(value)
    if not any(words):  # all-zero state is the one forbidden xoshiro state
        words[0] = GOLDEN
    return words


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


def xoshiro_next(s: list[int]) -> int:
    """Advance a 4-word xoshiro256** state in place; returns the draw."""
    result = (_rotl((s[1] * 5) & MASK64, 7) * 9) & MASK64
    t = (s[1] << 17) & MASK64
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], 45)
    return result


class PermStream:
    """Scalar view of one stream; bit-compatible with the bulk kernels.

    Draw ``i`` from ``PermStream(key)`` equals element ``i`` of
    ``kernels.bulk_u64(key, n)`` for any ``n > i``.
    """

    def __init__(self, key: int):
        self.key = key & MASK64
        self._block = 0
        self._state: list[int] | None = None
        self._pos = BLOCK

    def next_u64(self) -> int:
        if self._pos == BLOCK:
            self._state = block_state(self.key, self._block)
            self._block += 1
            self._pos = 0
        self._pos += 1
        return xoshiro_next(self._state)

    def below(self, n: int) -> int:
        """Uniform integer in [0, n) via rejection (no modulo bias)."""
        if n <= 0:
            raise ValueError(f"below() needs n >= 1, got {n}")
        limit = ((1 << 64) // n) * n
        while True:
            u = self.next_u64()
            if u < limit:
                return u % n

    def sample_indices(self, n: int, k: int) -> list[int]:
        """First k entries of a partial Fisher-Yates shuffle of range(n)."""
        k = min(k, n)
        idx = list(range(n))
        for i in range(k):
            j = i + self.below(n - i)
            idx[i], idx[j] = idx[j], idx[i]
        return idx[:k]

    def permutation(self, n: int) -> list[int]:
        return self.sample_indices(n, n)
