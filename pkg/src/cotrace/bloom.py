"""Bloom filter used to publish encrypted infected sets compactly.

Sizing is fixed at k = 20 hash functions and m = ceil(20 n / ln 2) bits
for a capacity of n elements, which puts the false-positive rate near
2^-20 at capacity. Queries of inserted elements always return true.
"""

from __future__ import annotations

import hashlib
import math
import struct

DEFAULT_K = 20
_LN2 = math.log(2)
_HEADER = struct.Struct(">QBQ")


def bits_for_capacity(n_capacity: int, k: int = DEFAULT_K) -> int:
    """m = ceil(n k / ln 2), with a 1-bit floor so n = 0 stays valid."""
    return max(1, math.ceil(n_capacity * k / _LN2))


class BloomFilter:
    def __init__(self, n_capacity: int, k: int = DEFAULT_K):
        if n_capacity < 0:
            raise ValueError("capacity must be nonnegative")
        if not 1 <= k <= 255:
            raise ValueError("k must fit in one byte and be at least 1")
        self.k = k
        self.n_capacity = n_capacity
        self.m = bits_for_capacity(n_capacity, k)
        self._bits = bytearray((self.m + 7) // 8)
        self.n_inserted = 0

    def _indexes(self, data: bytes) -> list[int]:
        # k independent indexes from one XOF read. Double hashing
        # (h1 + i*h2 mod m) measures ~20x the design rate at k = 20, so
        # each index gets its own 8 bytes; the mod-m bias at 64 bits is
        # ~2^-47 and irrelevant next to a 2^-20 target.
        stream = hashlib.shake_256(data).digest(8 * self.k)
        return [
            int.from_bytes(stream[off:off + 8], "big") % self.m
            for off in range(0, 8 * self.k, 8)
        ]

    def add(self, data: bytes) -> None:
        for idx in self._indexes(data):
            self._bits[idx >> 3] |= 0x80 >> (idx & 7)
        self.n_inserted += 1

    def __contains__(self, data: bytes) -> bool:
        return all(self._bits[idx >> 3] & (0x80 >> (idx & 7)) for idx in self._indexes(data))

    def false_positive_rate(self, n: int | None = None) -> float:
        """Analytic rate (1 - e^{-kn/m})^k for n inserted elements."""
        if n is None:
            n = self.n_inserted
        return (1.0 - math.exp(-self.k * n / self.m)) ** self.k

    def encode(self) -> bytes:
        """Header (m: u64, k: u8, capacity: u64, big-endian) + bit array.

        Bits are packed most-significant-bit first; pad bits in the last
        byte are zero.
        """
        return _HEADER.pack(self.m, self.k, self.n_capacity) + bytes(self._bits)

    @classmethod
    def decode(cls, blob: bytes) -> "BloomFilter":
        if len(blob) < _HEADER.size:
            raise ValueError("filter blob shorter than header")
        m, k, n_capacity = _HEADER.unpack_from(blob)
        body = blob[_HEADER.size:]
        if len(body) != (m + 7) // 8:
            raise ValueError(f"filter body is {len(body)} bytes, expected {(m + 7) // 8}")
        if m % 8 and body[-1] & ((1 << (8 - m % 8)) - 1):
            raise ValueError("pad bits beyond m are set")
        f = cls.__new__(cls)
        f.k = k
        f.n_capacity = n_capacity
        f.m = m
        f._bits = bytearray(body)
        f.n_inserted = n_capacity
        return f

    def __eq__(self, other) -> bool:
        if not isinstance(other, BloomFilter):
            return NotImplemented
        return (self.m, self.k, self.n_capacity, self._bits) == (
            other.m,
            other.k,
            other.n_capacity,
            other._bits,
        )


class ExactSet:
    """Drop-in membership stand-in with no false positives.

    Used in tests to separate protocol errors from Bloom noise: the
    cardinality protocol must be exact when this replaces the filter.
    """

    def __init__(self):
        self._items: set[bytes] = set()

    def add(self, data: bytes) -> None:
        self._items.add(data)

    def __contains__(self, data: bytes) -> bool:
        return data in self._items

    def __len__(self) -> int:
        return len(self._items)
