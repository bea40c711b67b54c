"""Block-removal trimming under a path-preserving or target-preserving constraint."""

from __future__ import annotations

from typing import Callable

from .executor import Executor
from .scheduler import QueueEntry, TargetBranch

MIN_BLOCK = 4
# block sizes len >> k for k in this range
TRIM_SHIFTS = range(2, 7)


def _trim(data: bytes, keep: Callable[[bytes], bool]) -> bytes:
    cur = bytes(data)
    for k in TRIM_SHIFTS:
        block = max(MIN_BLOCK, len(cur) >> k)
        pos = 0
        while pos < len(cur) and len(cur) > 1:
            if block >= len(cur):
                break
            cand = cur[:pos] + cur[pos + block:]
            if keep(cand):
                cur = cand
            else:
                pos += block
    return cur


def trim_to_path(entry: QueueEntry, executor: Executor) -> bytes:
    """Shortest block-trimmed input whose signature equals the entry's."""
    sig = entry.signature
    return _trim(entry.input, lambda d: executor.run_and_maybe_save(d).signature == sig)


def trim_to_target(entry: QueueEntry, target: TargetBranch, executor: Executor) -> bytes:
    """Block-trimmed input that still hits ``target.branch``.

    The result is re-executed once; if it no longer hits the target (only
    possible for targets that are not deterministic) the input is returned
    untrimmed.
    """

    def keep(d: bytes) -> bool:
        return executor.run_and_maybe_save(d, target.branch).hit_target

    out = _trim(entry.input, keep)
    if not keep(out):
        return entry.input
    return out
