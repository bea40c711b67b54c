"""Branch masks: which input positions may be overwritten, deleted, or have
bytes inserted before them while the input keeps hitting a target branch."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .executor import HIT, Executor, as_input
from .scheduler import TargetBranch

KINDS = ("overwrite", "delete", "insert")

# bytes of probe inputs built per kernel call
_PROBE_CHUNK_BYTES = 1 << 20


class MaskComputationError(RuntimeError):
    """The seed no longer hits the target branch."""


@dataclass
class BranchMask:
    overwritable: np.ndarray
    deletable: np.ndarray
    insertable: np.ndarray
    target: Optional[TargetBranch] = None

    def __post_init__(self) -> None:
        self.overwritable = np.asarray(self.overwritable, dtype=bool)
        self.deletable = np.asarray(self.deletable, dtype=bool)
        self.insertable = np.asarray(self.insertable, dtype=bool)
        n = len(self.overwritable)
        if len(self.deletable) != n or len(self.insertable) != n + 1:
            raise ValueError("mask arrays must have lengths n, n and n + 1")

    @classmethod
    def full(cls, n: int, target: Optional[TargetBranch] = None) -> "BranchMask":
        return cls(np.ones(n, bool), np.ones(n, bool), np.ones(n + 1, bool), target)

    def __len__(self) -> int:
        return len(self.overwritable)

    @property
    def is_empty(self) -> bool:
        return not (self.overwritable.any() or self.deletable.any() or self.insertable.any())

    def copy(self) -> "BranchMask":
        return BranchMask(self.overwritable.copy(), self.deletable.copy(), self.insertable.copy(), self.target)


def modifiable_positions(mask: BranchMask, kind: str) -> List[int]:
    flags = {"overwrite": mask.overwritable, "delete": mask.deletable, "insert": mask.insertable}[kind]
    return np.flatnonzero(flags).tolist()


def mask_on_delete(mask: BranchMask, start: int, length: int) -> None:
    """Drop the mask entries of input bytes ``[start, start + length)``."""
    n = len(mask)
    if start < 0 or length < 0 or start + length > n:
        raise IndexError(f"delete [{start}, {start + length}) outside mask of length {n}")
    cut = slice(start, start + length)
    mask.overwritable = np.delete(mask.overwritable, cut)
    mask.deletable = np.delete(mask.deletable, cut)
    mask.insertable = np.delete(mask.insertable, cut)


def mask_on_insert(mask: BranchMask, pos: int, length: int) -> None:
    """Splice ``length`` fully modifiable entries in at ``pos``."""
    n = len(mask)
    if pos < 0 or length < 0 or pos > n:
        raise IndexError(f"insert at {pos} outside mask of length {n}")
    fill = np.ones(length, dtype=bool)
    mask.overwritable = np.insert(mask.overwritable, pos, fill)
    mask.deletable = np.insert(mask.deletable, pos, fill)
    mask.insertable = np.insert(mask.insertable, pos, fill)


def deletion_probes(data: np.ndarray, positions: np.ndarray) -> np.ndarray:
    """Row ``r`` is ``data`` with byte ``positions[r]`` removed."""
    n = len(data)
    j = np.arange(n - 1)
    src = j[None, :] + (j[None, :] >= positions[:, None])
    return data[src]


def insertion_probes(data: np.ndarray, positions: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Row ``r`` is ``data`` with ``values[r]`` inserted before ``positions[r]``."""
    n = len(data)
    j = np.arange(n + 1)[None, :]
    p = positions[:, None]
    src = np.clip(j - (j > p), 0, max(n - 1, 0))
    out = data[src] if n else np.zeros((len(positions), 1), dtype=np.uint8)
    out = np.where(j == p, values[:, None].astype(np.uint8), out)
    return out.astype(np.uint8)


def _run_rows(executor: Executor, rows_fn, count: int, row_len: int, target: int) -> np.ndarray:
    hit = np.zeros(count, dtype=bool)
    step = max(1, _PROBE_CHUNK_BYTES // max(row_len, 1))
    for a in range(0, count, step):
        b = min(count, a + step)
        rows = rows_fn(np.arange(a, b))
        offs = np.arange(b - a + 1, dtype=np.int64) * row_len
        flags = executor.run_buffers(rows.reshape(-1), offs, target)
        hit[a:b] = (flags & HIT) != 0
    return hit


def compute_mask(seed, target: TargetBranch, executor: Executor, rng: np.random.Generator) -> BranchMask:
    """Probe every position of ``seed`` once per mask kind.

    Overwrite: flip all bits of the byte. Delete: drop the byte. Insert: put
    one random byte before the position (position ``n`` appends). A flag is
    set when the probe input still hits ``target.branch``. A one-byte seed
    skips its deletion probe since it would produce an empty input.
    """
    data = as_input(seed)
    n = len(data)
    br = target.branch
    if not executor.run_and_maybe_save(data, br).hit_target:
        raise MaskComputationError(f"seed does not hit branch {br}")

    flags = executor.run_patches(data, np.arange(n), np.ones(n, dtype=np.int64), data ^ 0xFF, br)
    overwritable = (flags & HIT) != 0

    if n > 1:
        deletable = _run_rows(executor, lambda p: deletion_probes(data, p), n, n - 1, br)
    else:
        # inputs never shrink below one byte, so the lone byte is not deletable
        deletable = np.zeros(1, dtype=bool)

    values = rng.integers(0, 256, size=n + 1, dtype=np.int64)
    insertable = _run_rows(executor, lambda p: insertion_probes(data, p, values[p]), n + 1, n + 1, br)

    return BranchMask(overwritable, deletable, insertable, target)
