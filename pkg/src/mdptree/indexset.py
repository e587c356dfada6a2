"""Sets of family members, stored as bitsets over the enumerated assignment space."""

from __future__ import annotations

from typing import Iterable, Iterator

import numpy as np


class IndexSet:
    """Immutable subset of ``range(universe)``.

    Bits live in a Python ``int`` so that intersection, union and popcount run
    in C regardless of family size.
    """

    __slots__ = ("bits", "universe", "_count")

    def __init__(self, bits: int, universe: int):
        if bits < 0 or bits >> universe:
            raise ValueError("bits outside of universe")
        self.bits = bits
        self.universe = universe
        self._count = -1

    @classmethod
    def full(cls, universe: int) -> IndexSet:
        return cls((1 << universe) - 1, universe)

    @classmethod
    def empty(cls, universe: int) -> IndexSet:
        return cls(0, universe)

    @classmethod
    def from_indices(cls, indices: Iterable[int], universe: int) -> IndexSet:
        bits = 0
        for i in indices:
            if not 0 <= i < universe:
                raise ValueError(f"index {i} outside of universe {universe}")
            bits |= 1 << i
        return cls(bits, universe)

    @classmethod
    def from_mask(cls, mask: np.ndarray) -> IndexSet:
        mask = np.asarray(mask, dtype=bool).ravel()
        return cls(mask_to_bits(mask), mask.size)

    @classmethod
    def from_runs(cls, runs: Iterable[Iterable[int]], universe: int) -> IndexSet:
        bits = 0
        for start, length in runs:
            bits |= ((1 << length) - 1) << start
        return cls(bits, universe)

    def __len__(self) -> int:
        if self._count < 0:
            self._count = self.bits.bit_count()
        return self._count

    def __bool__(self) -> bool:
        return self.bits != 0

    def __iter__(self) -> Iterator[int]:
        bits = self.bits
        while bits:
            low = bits & -bits
            yield low.bit_length() - 1
            bits ^= low

    def __contains__(self, i: int) -> bool:
        return 0 <= i < self.universe and (self.bits >> i) & 1 == 1

    def _check(self, other: IndexSet) -> None:
        if self.universe != other.universe:
            raise ValueError("index sets over different universes")

    def __and__(self, other: IndexSet) -> IndexSet:
        self._check(other)
        return IndexSet(self.bits & other.bits, self.universe)

    def __or__(self, other: IndexSet) -> IndexSet:
        self._check(other)
        return IndexSet(self.bits | other.bits, self.universe)

    def __sub__(self, other: IndexSet) -> IndexSet:
        self._check(other)
        return IndexSet(self.bits & ~other.bits, self.universe)

    def __le__(self, other: IndexSet) -> bool:
        self._check(other)
        return self.bits & ~other.bits == 0

    def __lt__(self, other: IndexSet) -> bool:
        return self <= other and self.bits != other.bits

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, IndexSet):
            return NotImplemented
        return self.bits == other.bits and self.universe == other.universe

    def __hash__(self) -> int:
        return hash((self.bits, self.universe))

    def isdisjoint(self, other: IndexSet) -> bool:
        return self.bits & other.bits == 0

    def min(self) -> int:
        if not self.bits:
            raise ValueError("empty index set")
        return (self.bits & -self.bits).bit_length() - 1

    def to_mask(self) -> np.ndarray:
        return bits_to_mask(self.bits, self.universe)

    def runs(self) -> list[tuple[int, int]]:
        """Maximal runs of consecutive members as ``(start, length)``."""
        out = []
        bits = self.bits
        pos = 0
        while bits:
            skip = (bits & -bits).bit_length() - 1
            bits >>= skip
            pos += skip
            length = (~bits & (bits + 1)).bit_length() - 1
            out.append((pos, length))
            bits >>= length
            pos += length
        return out

    def __repr__(self) -> str:
        if len(self) <= 16:
            return f"IndexSet({list(self)}, universe={self.universe})"
        return f"IndexSet(<{len(self)} of {self.universe}>)"


def mask_to_bits(mask: np.ndarray) -> int:
    packed = np.packbits(np.asarray(mask, dtype=bool).ravel(), bitorder="little")
    return int.from_bytes(packed.tobytes(), "little")


def bits_to_mask(bits: int, universe: int) -> np.ndarray:
    nbytes = (universe + 7) // 8
    raw = np.frombuffer(bits.to_bytes(nbytes, "little"), dtype=np.uint8)
    return np.unpackbits(raw, bitorder="little")[:universe].astype(bool)
