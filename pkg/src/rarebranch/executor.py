"""Running targets, collecting coverage, and saving interesting inputs.

Two execution paths exist and must agree:

* :meth:`Executor.run_and_maybe_save` handles one input at a time in Python
  (used by trimming and startup), building the signature explicitly.
* :meth:`Executor.run_patches` / :meth:`Executor.run_buffers` push a whole
  batch of mutants through one compiled kernel that updates the global
  bitmap and the input-hit counters in place and flags the mutants to save.
"""

from __future__ import annotations

import enum
import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from ._jit import njit
from .coverage import GlobalCoverage, RarityState, Signature, bucket_index, bucketize_array, signature_of
from .scheduler import Queue, QueueEntry
from .targets import BUDGET_EXCEEDED, CRASH, TargetProgram, make_recorder

log = logging.getLogger(__name__)

DEFAULT_BUDGET = 10**6

# per-mutant flag bits returned by the batch kernel
NEW = 1
HIT = 2
CRASHED = 4


class Status(enum.IntEnum):
    OK = 0
    CRASH = 1
    BUDGET_EXCEEDED = 2

    def __str__(self) -> str:
        return self.name.lower().replace("_", "-")


class BudgetExhausted(Exception):
    """The run's execution or wall-clock budget is spent."""


@dataclass
class ExecOutcome:
    map: np.ndarray
    status: Status
    cost: int


@dataclass
class RunResult:
    saved: bool
    status: Status
    cost: int
    hit_target: bool
    signature: Signature
    entry: Optional[QueueEntry] = None


def as_input(data) -> np.ndarray:
    """Writable uint8 copy of a byte sequence."""
    if isinstance(data, np.ndarray):
        return np.ascontiguousarray(data, dtype=np.uint8).copy()
    return np.frombuffer(bytes(data), dtype=np.uint8).copy()


@njit
def exec_one(entry, rec, data):
    rec.clear()
    rec.begin()
    status = entry(data, rec)
    if rec.n > rec.budget:
        status = BUDGET_EXCEEDED
    return status, min(rec.n, rec.budget), rec.ntouched


@njit
def clear_recorder(rec):
    rec.clear()


@njit
def _finish(rec, virgin, input_hits, target, side_effects):
    flags = 0
    if target >= 0 and rec.counts[target] > 0:
        flags |= HIT
    if side_effects:
        new = False
        for j in range(rec.ntouched):
            idx = rec.touched[j]
            bit = 1 << bucket_index(int(rec.counts[idx]))
            if virgin[idx] & bit == 0:
                new = True
                break
        if new:
            flags |= NEW
            for j in range(rec.ntouched):
                idx = rec.touched[j]
                virgin[idx] |= 1 << bucket_index(int(rec.counts[idx]))
        for j in range(rec.ntouched):
            input_hits[rec.touched[j]] += 1
    rec.clear()
    return flags


@njit
def exec_batch(entry, rec, virgin, input_hits, seed, buf, offs, ppos, pwidth, pval,
               use_patches, count, target, side_effects, flags_out):
    """Execute ``count`` mutants, either patches applied to ``seed`` or
    slices ``buf[offs[k]:offs[k+1]]``. Writes NEW/HIT/CRASHED bits per mutant."""
    work = seed.copy()
    rec.clear()
    for k in range(count):
        if use_patches:
            p = ppos[k]
            w = pwidth[k]
            v = pval[k]
            for j in range(w):
                work[p + j] = (v >> (8 * j)) & 0xFF
            cur = work
        else:
            cur = buf[offs[k]:offs[k + 1]]
        rec.begin()
        status = entry(cur, rec)
        over = rec.n > rec.budget
        f = _finish(rec, virgin, input_hits, target, side_effects)
        if status == CRASH and not over:
            f |= CRASHED
        flags_out[k] = f
        if use_patches:
            for j in range(w):
                work[p + j] = seed[p + j]
    return count


_EMPTY_U8 = np.zeros(0, dtype=np.uint8)
_EMPTY_I64 = np.zeros(0, dtype=np.int64)
_ZERO_OFFS = np.zeros(1, dtype=np.int64)


def run(target: TargetProgram, data, budget: int = DEFAULT_BUDGET) -> ExecOutcome:
    """Execute ``target`` once on ``data`` with no side effects."""
    rec, counts, _ = make_recorder(target.block_ids, budget)
    status, cost, _ = exec_one(target.entry, rec, as_input(data))
    return ExecOutcome(map=counts.copy(), status=Status(int(status)), cost=int(cost))


class Executor:
    """Owns a target plus the fuzzing state its executions feed.

    ``side_effects`` off (see :meth:`shadow`) means executions neither save
    inputs nor touch the global bitmap or the input-hit counters.
    """

    def __init__(
        self,
        target: TargetProgram,
        budget: int = DEFAULT_BUDGET,
        exec_limit: Optional[int] = None,
        deadline: Optional[float] = None,
    ) -> None:
        self.target = target
        self.budget = budget
        self.rec, self.counts, self.touched = make_recorder(target.block_ids, budget)
        self.coverage = GlobalCoverage()
        self.rarity = RarityState()
        self.queue = Queue()
        self.crashes: List[QueueEntry] = []
        self.execs = 0
        self.exec_limit = exec_limit
        self.deadline = deadline
        self.side_effects = True
        self.cycle = 0
        self.on_queue: List[Callable[[QueueEntry], None]] = []
        self.on_crash: List[Callable[[QueueEntry], None]] = []
        # called with no arguments after every counted execution or batch
        self.on_progress: List[Callable[[], None]] = []

    # -- budget -------------------------------------------------------------

    def remaining(self) -> int:
        if self.deadline is not None and time.monotonic() >= self.deadline:
            return 0
        if self.exec_limit is None:
            return 1 << 62
        return max(0, self.exec_limit - self.execs)

    def _progress(self) -> None:
        for cb in self.on_progress:
            cb()

    def _reserve(self, wanted: int) -> int:
        n = min(wanted, self.remaining())
        if n <= 0 and wanted > 0:
            raise BudgetExhausted
        return n

    @contextmanager
    def shadow(self):
        prev = self.side_effects
        self.side_effects = False
        try:
            yield
        finally:
            self.side_effects = prev

    # -- single executions -----------------------------------------------------

    def _exec_sparse(self, data: np.ndarray):
        status, cost, nt = exec_one(self.target.entry, self.rec, data)
        idx = self.touched[:nt].copy()
        hits = self.counts[idx].astype(np.int64)
        clear_recorder(self.rec)
        return Status(int(status)), int(cost), idx, hits

    def execute(self, data) -> ExecOutcome:
        """Run once without side effects and without counting the execution."""
        status, cost, idx, hits = self._exec_sparse(as_input(data))
        dense = np.zeros(self.counts.shape, dtype=np.uint32)
        dense[idx] = hits
        return ExecOutcome(map=dense, status=status, cost=cost)

    def run_and_maybe_save(self, data, target: int = -1) -> RunResult:
        self._reserve(1)
        arr = as_input(data)
        status, cost, idx, hits = self._exec_sparse(arr)
        self.execs += 1
        sig = signature_of(idx, hits)
        hit = target >= 0 and bool(np.any(idx == target))
        if not self.side_effects:
            self._progress()
            return RunResult(False, status, cost, hit, sig)
        buckets = bucketize_array(hits)
        new = self.coverage.observe_arrays(idx, buckets)
        self.rarity.record_branches(idx)
        entry = None
        if new and len(arr):
            entry = self._save(arr.tobytes(), sig, cost, status, self.execs)
        self._progress()
        return RunResult(new, status, cost, hit, sig, entry)

    def add_seed(self, data) -> QueueEntry:
        """Execute a user seed and queue it whether or not it is new."""
        self._reserve(1)
        arr = as_input(data)
        status, cost, idx, hits = self._exec_sparse(arr)
        self.execs += 1
        buckets = bucketize_array(hits)
        self.coverage.observe_arrays(idx, buckets)
        self.rarity.record_branches(idx)
        entry = self._save(arr.tobytes(), signature_of(idx, hits), cost, status, self.execs)
        self._progress()
        return entry

    def _save(self, data: bytes, sig: Signature, cost: int, status: Status, found_at: int) -> QueueEntry:
        crashed = status == Status.CRASH
        entry = self.queue.add(data, sig, cost, cycle=self.cycle, crashed=crashed, found_at=found_at)
        for cb in self.on_queue:
            cb(entry)
        if crashed:
            self.crashes.append(entry)
            for cb in self.on_crash:
                cb(entry)
        return entry

    def _save_materialized(self, data: np.ndarray, found_at: int) -> QueueEntry:
        status, cost, idx, hits = self._exec_sparse(data)
        return self._save(data.tobytes(), signature_of(idx, hits), cost, status, found_at)

    # -- batches --------------------------------------------------------------------

    def _batch(self, seed, buf, offs, ppos, pwidth, pval, use_patches, count, target):
        n = self._reserve(count) if count else 0
        flags = np.zeros(count, dtype=np.uint8)
        if n:
            exec_batch(
                self.target.entry, self.rec, self.coverage.bits, self.rarity.input_hits,
                seed, buf, offs, ppos, pwidth, pval, use_patches, n, int(target),
                self.side_effects, flags,
            )
            base = self.execs
            self.execs += n
            if self.side_effects:
                self.rarity.touch()
            for k in np.flatnonzero(flags[:n] & NEW).tolist():
                if use_patches:
                    data = seed.copy()
                    v = int(pval[k])
                    for j in range(int(pwidth[k])):
                        data[int(ppos[k]) + j] = (v >> (8 * j)) & 0xFF
                else:
                    data = buf[offs[k]:offs[k + 1]].copy()
                # empty inputs are executed but never queued
                if len(data):
                    self._save_materialized(data, base + k + 1)
            self._progress()
        if n < count:
            raise BudgetExhausted
        return flags

    def run_patches(self, seed: np.ndarray, pos, width, val, target: int = -1) -> np.ndarray:
        """Execute ``seed`` with each single patch ``(pos, width, val)`` applied.

        ``val`` packs the new bytes little-endian: byte ``j`` is ``val >> 8j``.
        Returns per-mutant flag bits.
        """
        return self._batch(
            np.ascontiguousarray(seed, dtype=np.uint8), _EMPTY_U8, _ZERO_OFFS,
            np.ascontiguousarray(pos, dtype=np.int64), np.ascontiguousarray(width, dtype=np.int64),
            np.ascontiguousarray(val, dtype=np.int64), True, len(pos), target,
        )

    def run_buffers(self, buf: np.ndarray, offs: np.ndarray, target: int = -1) -> np.ndarray:
        """Execute each ``buf[offs[k]:offs[k+1]]``; returns per-mutant flag bits."""
        return self._batch(
            _EMPTY_U8, np.ascontiguousarray(buf, dtype=np.uint8), np.ascontiguousarray(offs, dtype=np.int64),
            _EMPTY_I64, _EMPTY_I64, _EMPTY_I64, False, len(offs) - 1, target,
        )

    def run_inputs(self, inputs, target: int = -1) -> np.ndarray:
        arrays = [as_input(d) for d in inputs]
        offs = np.zeros(len(arrays) + 1, dtype=np.int64)
        np.cumsum([len(a) for a in arrays], out=offs[1:])
        buf = np.concatenate(arrays) if arrays else _EMPTY_U8
        return self.run_buffers(buf, offs, target)

    def state_fingerprint(self) -> bytes:
        """Bytes that change whenever the queue, bitmap or hit counters change."""
        return self.coverage.fingerprint() + self.rarity.fingerprint() + len(self.queue).to_bytes(8, "little")
