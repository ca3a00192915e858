"""Fixed-width vector clocks."""
from __future__ import annotations

from typing import Iterable, Sequence


class ClockWidthError(ValueError):
    pass


def _check(a: Sequence[int], b: Sequence[int]) -> None:
    if len(a) != len(b):
        raise ClockWidthError(f"clock widths differ: {len(a)} vs {len(b)}")


class VectorClock(tuple):
    """Immutable tuple of per-thread timestamps."""

    __slots__ = ()

    def __new__(cls, stamps: Iterable[int] = ()):
        return super().__new__(cls, stamps)

    @classmethod
    def zeros(cls, width: int) -> "VectorClock":
        return cls((0,) * width)

    @property
    def width(self) -> int:
        return len(self)

    def join(self, other: Sequence[int]) -> "VectorClock":
        return join(self, other)

    def less(self, other: Sequence[int]) -> bool:
        return less(self, other)

    def concurrent(self, other: Sequence[int]) -> bool:
        return concurrent(self, other)

    def inc(self, index: int) -> "VectorClock":
        return inc(self, index)

    def __str__(self) -> str:
        return "[" + ",".join(map(str, self)) + "]"

    def __repr__(self) -> str:
        return f"VectorClock({str(self)})"


def join(a: Sequence[int], b: Sequence[int]) -> VectorClock:
    _check(a, b)
    return VectorClock(map(max, a, b))


def leq(a: Sequence[int], b: Sequence[int]) -> bool:
    _check(a, b)
    return all(x <= y for x, y in zip(a, b))


def less(a: Sequence[int], b: Sequence[int]) -> bool:
    """Strict product order: pointwise <= and different somewhere."""
    _check(a, b)
    strict = False
    for x, y in zip(a, b):
        if x > y:
            return False
        if x < y:
            strict = True
    return strict


def concurrent(a: Sequence[int], b: Sequence[int]) -> bool:
    return not less(a, b) and not less(b, a)


def inc(v: Sequence[int], index: int) -> VectorClock:
    if not 0 <= index < len(v):
        raise IndexError(f"thread index {index} out of range for width {len(v)}")
    out = list(v)
    out[index] += 1
    return VectorClock(out)


def pairwise_concurrent(clocks: Sequence[Sequence[int]]) -> bool:
    n = len(clocks)
    return all(concurrent(clocks[i], clocks[j]) for i in range(n) for j in range(i + 1, n))
