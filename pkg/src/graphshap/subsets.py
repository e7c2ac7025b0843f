"""Feature sets as integer bitmasks.

Bit ``i`` of the mask is set when feature ``i`` is a member. Python integers
are unbounded, so the same representation covers games wider than 64
features; the numpy fast paths elsewhere in the package switch to object
arithmetic once an index reaches 63.
"""

from __future__ import annotations

from typing import Iterable, Iterator

import numpy as np

EMPTY = 0


def to_mask(members: Iterable[int]) -> int:
    mask = 0
    for i in members:
        i = int(i)
        if i < 0:
            raise ValueError(f"feature index must be non-negative, got {i}")
        mask |= 1 << i
    return mask


def members(mask: int) -> list[int]:
    """Sorted member indices of ``mask``."""
    out = []
    i = 0
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    return out


def full_mask(n: int) -> int:
    return (1 << n) - 1


def popcount(mask: int) -> int:
    return bin(mask).count("1")


def complement(mask: int, n: int) -> int:
    return full_mask(n) & ~mask


def check_within(mask: int, n: int) -> None:
    if mask < 0 or mask >> n:
        raise ValueError(f"feature set {members(mask)} not within 0..{n - 1}")


def iter_subsets(mask: int) -> Iterator[int]:
    """All subsets of ``mask`` in counting order over its sorted members."""
    idx = members(mask)
    for local in range(1 << len(idx)):
        yield expand(local, idx)


def expand(local: int, idx: list[int]) -> int:
    """Map a mask over positions of ``idx`` to a mask over feature indices."""
    out = 0
    b = 0
    while local:
        if local & 1:
            out |= 1 << idx[b]
        local >>= 1
        b += 1
    return out


def expand_all(idx: list[int]) -> np.ndarray:
    """Global masks for every local subset of ``idx``, in counting order.

    Returns an int64 array when every index is below 63, else an object
    array of Python ints.
    """
    k = len(idx)
    local = np.arange(1 << k, dtype=np.int64)
    if not idx or max(idx) < 63:
        out = np.zeros(1 << k, dtype=np.int64)
        for b, i in enumerate(idx):
            out |= ((local >> b) & 1) << i
        return out
    return np.array([expand(int(l), idx) for l in local], dtype=object)


def popcounts(k: int) -> np.ndarray:
    """Popcount of every integer in ``range(2**k)``."""
    counts = np.zeros(1 << k, dtype=np.int64)
    for b in range(k):
        counts[1 << b : 1 << (b + 1)] = counts[: 1 << b] + 1
    return counts
