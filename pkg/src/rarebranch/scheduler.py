"""The input queue and the two seed-selection policies.

Baseline selection is probabilistic and prefers a "favored" frontier of
cheap, short entries. Rare-branch selection only picks entries that hit a
branch whose input count is within the current rarity cutoff, and hands back
the rarest such branch as the mutation target.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional

import numpy as np

from .coverage import Pair, RarityState, Signature, signature_branches

SKIP_FUZZED_PROB = 0.05
SKIP_NEW_PROB = 0.25


class RarityUndefined(RuntimeError):
    """No observed, non-excluded branch exists yet."""


@dataclass(eq=False)
class QueueEntry:
    input: bytes
    id: int
    signature: Signature
    exec_cost: int
    discovered_cycle: int = 0
    fuzzed_before: bool = False
    favored: bool = False
    crashed: bool = False
    det_done: bool = False
    trimmed: bool = False
    found_at: int = 0  # executions performed when this entry was saved
    branches: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if len(self.input) < 1:
            raise ValueError("queue entries must be at least one byte long")
        if not self.signature:
            raise ValueError("queue entries must carry a non-empty signature")
        self.branches = signature_branches(self.signature)

    def __len__(self) -> int:
        return len(self.input)

    @property
    def weight(self) -> int:
        return self.exec_cost * len(self.input)


@dataclass(frozen=True)
class TargetBranch:
    branch: int
    input_hits_at_selection: int


class Queue:
    def __init__(self) -> None:
        self.entries: List[QueueEntry] = []
        self.top_rated: Dict[Pair, QueueEntry] = {}
        self._favored_dirty = False

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[QueueEntry]:
        return iter(self.entries)

    def __getitem__(self, i: int) -> QueueEntry:
        return self.entries[i]

    def add(self, data: bytes, sig: Signature, exec_cost: int, cycle: int = 0, crashed: bool = False,
            found_at: int = 0) -> QueueEntry:
        entry = QueueEntry(bytes(data), len(self.entries), sig, exec_cost, discovered_cycle=cycle,
                           crashed=crashed, found_at=found_at)
        self.entries.append(entry)
        self._rate(entry)
        return entry

    def replace_input(self, entry: QueueEntry, data: bytes, exec_cost: int) -> None:
        """Swap in a trimmed input with the same signature."""
        entry.input = bytes(data)
        entry.exec_cost = exec_cost
        self._rate(entry)

    def _rate(self, entry: QueueEntry) -> None:
        w = entry.weight
        for pair in entry.signature:
            cur = self.top_rated.get(pair)
            if cur is None or w < cur.weight:
                self.top_rated[pair] = entry
                self._favored_dirty = True

    def refresh_favored(self) -> None:
        if not self._favored_dirty:
            return
        favored = {id(e) for e in self.top_rated.values()}
        for e in self.entries:
            e.favored = id(e) in favored
        self._favored_dirty = False

    @property
    def avg_exec_cost(self) -> float:
        return float(np.mean([e.exec_cost for e in self.entries])) if self.entries else 1.0

    @property
    def avg_length(self) -> float:
        return float(np.mean([len(e.input) for e in self.entries])) if self.entries else 1.0


def baseline_is_worth_fuzzing(entry: QueueEntry, rng: np.random.Generator) -> bool:
    """Favored entries always; others with probability 0.25 (new) or 0.05 (fuzzed)."""
    if entry.favored:
        return True
    p = SKIP_FUZZED_PROB if entry.fuzzed_before else SKIP_NEW_PROB
    return bool(rng.random() < p)


def rarity_cutoff(rarity: RarityState) -> int:
    """Smallest power of two bounding the input count of the rarest branch."""
    version, cached = rarity._cutoff_cache
    if version == rarity.version:
        return cached
    m = rarity.rarest_count()
    if m == 0:
        raise RarityUndefined("no observed, non-excluded branch")
    cutoff = 1 << (m - 1).bit_length()
    rarity._cutoff_cache = (rarity.version, cutoff)
    return cutoff


def hits_rare_branch(entry: QueueEntry, rarity: RarityState) -> Optional[TargetBranch]:
    cutoff = rarity_cutoff(rarity)
    br = entry.branches
    hits = rarity.input_hits[br]
    ok = (~rarity.excluded_mask[br]) & (hits <= cutoff) & (hits > 0)
    if not ok.any():
        return None
    br, hits = br[ok], hits[ok]
    # branches are sorted, so argmin returns the lowest id among ties
    k = int(np.argmin(hits))
    return TargetBranch(int(br[k]), int(hits[k]))


def exclude_branch(rarity: RarityState, branch: int) -> None:
    rarity.exclude(branch)
