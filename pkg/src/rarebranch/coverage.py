"""Branch identifiers, hit-count buckets, coverage maps and global coverage state.

A branch is a transition between two basic blocks, identified by
``(id(A) >> 1) ^ id(B)``. One execution produces a dense map of raw hit counts
per branch; the *signature* of that execution is the set of
``(branch, bucket)`` pairs with the raw counts coarsened into eight buckets.
"""

from __future__ import annotations

from typing import FrozenSet, Iterable, Set, Tuple

import numpy as np

from ._jit import njit

MAP_SIZE = 1 << 16
MAP_MASK = MAP_SIZE - 1

# Lower bound of each bucket: {1}, {2}, {3}, {4-7}, {8-15}, {16-31}, {32-127}, {128+}
BUCKET_LOWER = (1, 2, 3, 4, 8, 16, 32, 128)
N_BUCKETS = len(BUCKET_LOWER)
BUCKET_LABELS = ("1", "2", "3", "4-7", "8-15", "16-31", "32-127", "128+")

_BUCKET_LOWER_ARR = np.array(BUCKET_LOWER, dtype=np.int64)

Pair = Tuple[int, int]
Signature = FrozenSet[Pair]


def transition_id(a: int, b: int) -> int:
    """Branch id of the transition from block ``a`` to block ``b``."""
    return ((a >> 1) ^ b) & MAP_MASK


@njit(cache=True)
def bucket_index(count):
    if count <= 3:
        return count - 1
    if count <= 7:
        return 3
    if count <= 15:
        return 4
    if count <= 31:
        return 5
    if count <= 127:
        return 6
    return 7


def bucketize(count: int) -> int:
    """Bucket index in ``[0, 8)`` for a raw hit count ``>= 1``."""
    if count < 1:
        raise ValueError(f"hit count must be >= 1, got {count}")
    return int(bucket_index(int(count)))


def bucketize_array(counts: np.ndarray) -> np.ndarray:
    """Vectorised :func:`bucketize` for an array of positive counts."""
    return np.searchsorted(_BUCKET_LOWER_ARR, counts, side="right") - 1


def signature(counts: np.ndarray) -> Signature:
    """Coverage signature of a dense hit-count map."""
    idx = np.flatnonzero(counts)
    return signature_of(idx, counts[idx])


def signature_of(branches: np.ndarray, counts: np.ndarray) -> Signature:
    buckets = bucketize_array(counts)
    return frozenset(zip(branches.tolist(), buckets.tolist()))


def signature_branches(sig: Iterable[Pair]) -> np.ndarray:
    """Sorted distinct branch ids appearing in a signature."""
    return np.unique(np.fromiter((b for b, _ in sig), dtype=np.int64))


class GlobalCoverage:
    """Every ``(branch, bucket)`` pair observed so far.

    Stored as a virgin-style bitmap: bit ``k`` of ``bits[b]`` is set once the
    pair ``(b, k)`` has been seen. The batch kernels update ``bits`` in place.
    """

    def __init__(self) -> None:
        self.bits = np.zeros(MAP_SIZE, dtype=np.uint8)

    @property
    def seen(self) -> Set[Pair]:
        out = set()
        for b in np.flatnonzero(self.bits).tolist():
            v = int(self.bits[b])
            out.update((b, k) for k in range(N_BUCKETS) if v >> k & 1)
        return out

    @property
    def branch_count(self) -> int:
        return int(np.count_nonzero(self.bits))

    @property
    def pair_count(self) -> int:
        return int(np.unpackbits(self.bits).sum())

    def observe(self, sig: Iterable[Pair]) -> bool:
        """Insert every pair of ``sig``; True iff at least one was new."""
        pairs = list(sig)
        if not pairs:
            return False
        arr = np.array(pairs, dtype=np.int64)
        return self.observe_arrays(arr[:, 0], arr[:, 1])

    def observe_arrays(self, branches: np.ndarray, buckets: np.ndarray, update: bool = True) -> bool:
        masks = (1 << buckets).astype(np.uint8)
        new = bool(np.any((self.bits[branches] & masks) == 0))
        if new and update:
            np.bitwise_or.at(self.bits, branches, masks)
        return new

    def fingerprint(self) -> bytes:
        return self.bits.tobytes()


@njit(cache=True)
def _min_observed(input_hits, excluded):
    best = 0
    for i in range(len(input_hits)):
        h = input_hits[i]
        if h > 0 and not excluded[i] and (best == 0 or h < best):
            best = h
    return best


class RarityState:
    """Per-branch count of distinct inputs hitting it, plus the exclude list."""

    def __init__(self) -> None:
        self.input_hits = np.zeros(MAP_SIZE, dtype=np.int64)
        self.excluded_mask = np.zeros(MAP_SIZE, dtype=bool)
        # bumped on every change; lets callers cache derived values
        self.version = 0
        self._cutoff_cache: Tuple[int, int] = (-1, 0)

    def touch(self) -> None:
        """Mark the counters as changed after an in-place update."""
        self.version += 1

    @property
    def excluded(self) -> Set[int]:
        return set(np.flatnonzero(self.excluded_mask).tolist())

    def record_input_hits(self, counts: np.ndarray) -> None:
        """Count one more input for every branch hit at least once in ``counts``."""
        self.input_hits[counts > 0] += 1
        self.version += 1

    def record_branches(self, branches: np.ndarray) -> None:
        # branches must be distinct
        self.input_hits[branches] += 1
        self.version += 1

    def exclude(self, branch: int) -> None:
        self.excluded_mask[branch] = True
        self.version += 1

    def candidates(self) -> np.ndarray:
        """Observed, non-excluded branch ids."""
        return np.flatnonzero((self.input_hits > 0) & ~self.excluded_mask)

    def rarest_count(self) -> int:
        """Input count of the rarest observed, non-excluded branch; 0 if there is none."""
        return int(_min_observed(self.input_hits, self.excluded_mask))

    def fingerprint(self) -> bytes:
        return self.input_hits.tobytes() + self.excluded_mask.tobytes()
