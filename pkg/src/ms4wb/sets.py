"""Fixed-width bit sets over a frame's points.

A PointSet is a subset of the points of one specific frame, stored as an
integer bitmask whose width equals the frame's point count.  Bit i stands
for the point with index i in the frame's point order.  All set algebra
respects the width; combining sets of different widths is an error.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator

from .errors import WorkbenchError


def bits(mask: int) -> Iterator[int]:
    """Yield the set bit positions of ``mask`` in ascending order."""
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low


@dataclass(frozen=True)
class PointSet:
    mask: int
    width: int

    def __post_init__(self):
        if self.width < 0 or self.mask < 0 or self.mask >> self.width:
            raise WorkbenchError(
                f"mask {self.mask:#x} does not fit in width {self.width}"
            )

    @classmethod
    def empty(cls, width: int) -> "PointSet":
        return cls(0, width)

    @classmethod
    def full(cls, width: int) -> "PointSet":
        return cls((1 << width) - 1, width)

    @classmethod
    def from_indices(cls, indices: Iterable[int], width: int) -> "PointSet":
        mask = 0
        for i in indices:
            if not 0 <= i < width:
                raise WorkbenchError(f"point index {i} out of range 0..{width - 1}")
            mask |= 1 << i
        return cls(mask, width)

    def _check(self, other: "PointSet") -> None:
        if self.width != other.width:
            raise WorkbenchError(
                f"width mismatch: {self.width} vs {other.width}"
            )

    def __and__(self, other):
        self._check(other)
        return PointSet(self.mask & other.mask, self.width)

    def __or__(self, other):
        self._check(other)
        return PointSet(self.mask | other.mask, self.width)

    def __sub__(self, other):
        self._check(other)
        return PointSet(self.mask & ~other.mask, self.width)

    def __invert__(self):
        return PointSet(self.mask ^ ((1 << self.width) - 1), self.width)

    def __le__(self, other):
        self._check(other)
        return self.mask & ~other.mask == 0

    def __len__(self):
        return self.mask.bit_count()

    def __bool__(self):
        return self.mask != 0

    def __contains__(self, index: int) -> bool:
        return 0 <= index < self.width and bool(self.mask >> index & 1)

    def indices(self) -> tuple[int, ...]:
        return tuple(bits(self.mask))

    def names(self, points: tuple[str, ...]) -> tuple[str, ...]:
        return tuple(points[i] for i in bits(self.mask))

    def __repr__(self):
        return f"PointSet({self.mask:#x}, width={self.width})"
