"""The fuzz loop: queue cycles, mode dispatch, bootstrap, exclusion and shadow runs."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .executor import DEFAULT_BUDGET, BudgetExhausted, Executor
from .mask import BranchMask, MaskComputationError, compute_mask
from .mutators import (
    CALIBRATION_STAGE,
    DET_STAGES,
    MAX_INPUT_LEN,
    HavocWorkspace,
    StageStats,
    deterministic_pass,
    draw_havoc_seeds,
    havoc_pass,
    performance_score,
)
from .scheduler import (
    QueueEntry,
    RarityUndefined,
    TargetBranch,
    baseline_is_worth_fuzzing,
    exclude_branch,
    hits_rare_branch,
    rarity_cutoff,
)
from .targets import TargetProgram, get_target
from .trimmer import trim_to_path, trim_to_target

log = logging.getLogger(__name__)

MODES = ("afl", "fidgety", "fairfuzz")
TRIM_CHOICES = ("path", "target", "off")
DET_CHOICES = ("all", "mask-only", "off")

MODE_DEFAULTS = {
    "afl": {"trim": "path", "det": "all"},
    "fidgety": {"trim": "path", "det": "off"},
    "fairfuzz": {"trim": "target", "det": "mask-only"},
}

# masked deterministic stages; byte flips are already performed by the mask probe
MASKED_DET_STAGES = tuple(s for s in DET_STAGES if s != CALIBRATION_STAGE)


class ConfigError(ValueError):
    """Inconsistent fuzzing configuration."""


@dataclass
class FuzzConfig:
    target: str
    seeds: Sequence[bytes]
    mode: str = "fairfuzz"
    trim: Optional[str] = None
    det: Optional[str] = None
    shadow: bool = False
    execs: Optional[int] = None
    seconds: Optional[float] = None
    rng_seed: int = 0
    snapshot_every: int = 100_000
    max_len: int = MAX_INPUT_LEN
    exec_budget: int = DEFAULT_BUDGET
    cycles: Optional[int] = None

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        defaults = MODE_DEFAULTS[self.mode]
        if self.trim is None:
            self.trim = defaults["trim"]
        if self.det is None:
            # shadow comparisons cover both stage families
            self.det = "all" if self.shadow else defaults["det"]
        if self.trim not in TRIM_CHOICES:
            raise ConfigError(f"unknown trim mode {self.trim!r}")
        if self.det not in DET_CHOICES:
            raise ConfigError(f"unknown det mode {self.det!r}")
        if self.mode != "fairfuzz":
            if self.shadow:
                raise ConfigError("--shadow requires --mode fairfuzz")
            if self.trim == "target":
                raise ConfigError("--trim target requires --mode fairfuzz")
            if self.det == "mask-only":
                raise ConfigError("--det mask-only requires --mode fairfuzz")
        if self.shadow and self.det == "off":
            raise ConfigError("--shadow needs a branch mask; drop --det off")
        if not self.seeds:
            raise ConfigError("no seed inputs")
        if any(len(s) == 0 for s in self.seeds):
            raise ConfigError("seed inputs must be non-empty")
        if self.max_len < 1 or self.exec_budget < 1 or self.snapshot_every < 1:
            raise ConfigError("--max-len, --exec-budget and --snapshot-every must be positive")
        if self.execs is None and self.seconds is None and self.cycles is None:
            raise ConfigError("set at least one of --execs, --seconds, --cycles")


@dataclass
class ShadowStats:
    """Paired target-hit rates of one (seed, target) mutation pass."""

    seed_id: int
    target_branch: int
    det_mask: StageStats = field(default_factory=StageStats)
    det_plain: StageStats = field(default_factory=StageStats)
    havoc_mask: StageStats = field(default_factory=StageStats)
    havoc_plain: StageStats = field(default_factory=StageStats)

    @property
    def det_mask_pct(self) -> Optional[float]:
        return self.det_mask.pct

    @property
    def det_plain_pct(self) -> Optional[float]:
        return self.det_plain.pct

    @property
    def havoc_mask_pct(self) -> Optional[float]:
        return self.havoc_mask.pct

    @property
    def havoc_plain_pct(self) -> Optional[float]:
        return self.havoc_plain.pct

    def row(self) -> Tuple:
        return (self.seed_id, self.target_branch, self.det_mask_pct, self.det_plain_pct,
                self.havoc_mask_pct, self.havoc_plain_pct)


SHADOW_COLUMNS = ("det_mask", "det_plain", "havoc_mask", "havoc_plain")


def summarize_shadow(rows: Sequence[ShadowStats]) -> Dict[str, Dict[str, Optional[float]]]:
    """Per-seed (unweighted) and pooled per-mutant averages of each column."""
    out: Dict[str, Dict[str, Optional[float]]] = {"per_seed": {}, "per_mutant": {}}
    for col in SHADOW_COLUMNS:
        stats = [getattr(r, col) for r in rows]
        pcts = [s.pct for s in stats if s.pct is not None]
        out["per_seed"][col] = float(np.mean(pcts)) if pcts else None
        gen = sum(s.generated for s in stats)
        out["per_mutant"][col] = 100.0 * sum(s.hits for s in stats) / gen if gen else None
    return out


@dataclass(frozen=True)
class Snapshot:
    execs: int
    seconds: float
    cycles: int
    queue_len: int
    branches: int
    rarity_cutoff: Optional[int]
    excluded: int
    crashes: int


@dataclass(frozen=True)
class Selection:
    """One seed chosen for mutation; ``target`` is None under baseline selection."""

    cycle: int
    entry_id: int
    target: Optional[int]
    target_hits: Optional[int]
    excluded: bool = False


class Fuzzer:
    def __init__(self, config: FuzzConfig, target: Optional[TargetProgram] = None) -> None:
        self.config = config
        self.program = target if target is not None else get_target(config.target)
        self.rng = np.random.default_rng(config.rng_seed)
        self.executor = Executor(self.program, budget=config.exec_budget, exec_limit=config.execs)
        self.workspace = HavocWorkspace(config.max_len)
        self.cycles_done = 0
        self.snapshots: List[Snapshot] = []
        self.shadow_stats: List[ShadowStats] = []
        self.selections: List[Selection] = []
        self.stall_fallbacks = 0
        self.latest: Optional[Snapshot] = None
        self.on_snapshot: List[Callable[[Snapshot], None]] = []
        self.on_shadow: List[Callable[[ShadowStats], None]] = []
        self.on_trim: List[Callable[[QueueEntry], None]] = []
        self._next_snapshot = config.snapshot_every
        self._t0 = 0.0
        self.stop_reason = ""

    # -- statistics --------------------------------------------------------------------

    def snapshot_stats(self) -> Snapshot:
        ex = self.executor
        try:
            cutoff: Optional[int] = rarity_cutoff(ex.rarity)
        except RarityUndefined:
            cutoff = None
        snap = Snapshot(
            execs=ex.execs,
            seconds=time.monotonic() - self._t0,
            cycles=self.cycles_done,
            queue_len=len(ex.queue),
            branches=ex.coverage.branch_count,
            rarity_cutoff=cutoff,
            excluded=int(ex.rarity.excluded_mask.sum()),
            crashes=len(ex.crashes),
        )
        self.latest = snap
        return snap

    def _publish(self) -> None:
        snap = self.snapshot_stats()
        self.snapshots.append(snap)
        for cb in self.on_snapshot:
            cb(snap)

    def _on_progress(self) -> None:
        if self.executor.execs >= self._next_snapshot:
            self._publish()
            every = self.config.snapshot_every
            self._next_snapshot = (self.executor.execs // every + 1) * every

    # -- mutation passes ---------------------------------------------------------------

    def _score(self, entry: QueueEntry) -> int:
        q = self.executor.queue
        return performance_score(entry, q.avg_exec_cost, q.avg_length)

    def _path_trim(self, entry: QueueEntry) -> None:
        if self.config.trim != "path" or entry.trimmed:
            return
        out = trim_to_path(entry, self.executor)
        entry.trimmed = True
        if out != entry.input:
            self.executor.queue.replace_input(entry, out, self.executor.execute(out).cost)
            for cb in self.on_trim:
                cb(entry)

    def _baseline_pass(self, entry: QueueEntry, det: bool) -> None:
        self._path_trim(entry)
        if det and not entry.det_done:
            deterministic_pass(entry.input, self.executor)
            entry.det_done = True
        havoc_pass(entry.input, self.executor, self._score(entry), self.rng,
                   max_len=self.config.max_len, workspace=self.workspace)
        entry.fuzzed_before = True

    def _fairfuzz_pass(self, entry: QueueEntry, target: TargetBranch) -> bool:
        """Masked pass over ``entry`` aimed at ``target``; returns True if it was excluded."""
        cfg = self.config
        ex = self.executor
        br = target.branch
        if cfg.trim == "target":
            data = trim_to_target(entry, target, ex)
        else:
            self._path_trim(entry)
            data = entry.input

        mask: Optional[BranchMask] = None
        if cfg.det != "off":
            try:
                mask = compute_mask(data, target, ex, self.rng)
            except MaskComputationError:
                log.info("seed %d no longer hits branch %d; skipped", entry.id, br)
                return False
            if mask.is_empty:
                exclude_branch(ex.rarity, br)
                entry.fuzzed_before = True
                if cfg.shadow:
                    self._record_shadow(ShadowStats(entry.id, br))
                return True

        shadow = ShadowStats(entry.id, br)
        if cfg.det == "all":
            if cfg.shadow:
                with ex.shadow():
                    for s in deterministic_pass(data, ex, None, br, MASKED_DET_STAGES).values():
                        shadow.det_plain += s
            for s in deterministic_pass(data, ex, mask, br, MASKED_DET_STAGES).values():
                shadow.det_mask += s

        score = self._score(entry)
        seeds = draw_havoc_seeds(self.rng, score)
        if cfg.shadow:
            with ex.shadow():
                shadow.havoc_plain = havoc_pass(data, ex, score, mask=None, target=br, seeds=seeds,
                                                max_len=cfg.max_len, workspace=self.workspace)
        shadow.havoc_mask = havoc_pass(data, ex, score, mask=mask, target=br, seeds=seeds,
                                       max_len=cfg.max_len, workspace=self.workspace)
        entry.fuzzed_before = True
        if cfg.shadow:
            self._record_shadow(shadow)
        if shadow.det_mask.hits + shadow.havoc_mask.hits == 0:
            exclude_branch(ex.rarity, br)
            return True
        return False

    def _record_shadow(self, s: ShadowStats) -> None:
        self.shadow_stats.append(s)
        for cb in self.on_shadow:
            cb(s)

    # -- loop ---------------------------------------------------------------------------

    def _startup(self) -> List[QueueEntry]:
        entries = []
        for seed in self.config.seeds:
            entries.append(self.executor.add_seed(bytes(seed[: self.config.max_len])))
        return entries

    def _bootstrap(self, seeds: List[QueueEntry]) -> None:
        # one unmasked round per user seed so rarity counts exist
        for entry in seeds:
            deterministic_pass(entry.input, self.executor)
            entry.det_done = True
            havoc_pass(entry.input, self.executor, self._score(entry), self.rng,
                       max_len=self.config.max_len, workspace=self.workspace)
            entry.fuzzed_before = True

    def _cycle(self, rare: bool) -> int:
        ex = self.executor
        snapshot = list(ex.queue.entries)
        selected = 0
        for entry in snapshot:
            if rare:
                try:
                    target = hits_rare_branch(entry, ex.rarity)
                except RarityUndefined:
                    target = None
                if target is None:
                    continue
                selected += 1
                self.selections.append(Selection(self.cycles_done, entry.id, target.branch,
                                                 target.input_hits_at_selection))
                if self._fairfuzz_pass(entry, target):
                    self.selections[-1] = Selection(self.cycles_done, entry.id, target.branch,
                                                    target.input_hits_at_selection, excluded=True)
            else:
                ex.queue.refresh_favored()
                if not baseline_is_worth_fuzzing(entry, self.rng):
                    continue
                selected += 1
                self.selections.append(Selection(self.cycles_done, entry.id, None, None))
                self._baseline_pass(entry, det=self.config.det == "all")
        return selected

    def run(self) -> Snapshot:
        cfg = self.config
        ex = self.executor
        self._t0 = time.monotonic()
        if cfg.seconds is not None:
            ex.deadline = self._t0 + cfg.seconds
        ex.on_progress.append(self._on_progress)
        fallback = False
        try:
            seeds = self._startup()
            self._publish()
            if cfg.mode == "fairfuzz":
                self._bootstrap(seeds)
            while cfg.cycles is None or self.cycles_done < cfg.cycles:
                rare = cfg.mode == "fairfuzz" and not fallback
                ex.cycle = self.cycles_done
                selected = self._cycle(rare)
                fallback = rare and selected == 0
                if fallback:
                    self.stall_fallbacks += 1
                    log.warning("cycle %d selected no seeds; using baseline selection for one cycle",
                                self.cycles_done)
                self.cycles_done += 1
                self._publish()
            self.stop_reason = "cycles"
        except BudgetExhausted:
            self.stop_reason = "budget"
        finally:
            ex.on_progress.remove(self._on_progress)
        final = self.snapshot_stats()
        last = self.snapshots[-1] if self.snapshots else None
        if last is None or (last.execs, last.cycles) != (final.execs, final.cycles):
            self.snapshots.append(final)
            for cb in self.on_snapshot:
                cb(final)
        return final

    # -- reporting ------------------------------------------------------------------

    def deepest_found_at(self) -> Optional[int]:
        """Execution count at which the target's deepest branch was first saved."""
        br = self.program.deepest_branch
        found = [e.found_at for e in self.executor.queue if br in set(e.branches.tolist())]
        return min(found) if found else None

    def summary(self) -> Dict:
        ex = self.executor
        final = self.latest or self.snapshot_stats()
        out = {
            "target": self.program.name,
            "mode": self.config.mode,
            "trim": self.config.trim,
            "det": self.config.det,
            "shadow": self.config.shadow,
            "rng_seed": self.config.rng_seed,
            "stop_reason": self.stop_reason,
            "final": asdict(final),
            "pairs": ex.coverage.pair_count,
            "excluded_branches": sorted(ex.rarity.excluded),
            "selections": len(self.selections),
            "stall_fallbacks": self.stall_fallbacks,
            "deepest_branch": self.program.deepest_branch,
            "deepest_label": self.program.deepest_label,
            "deepest_found_at": self.deepest_found_at(),
        }
        if self.config.shadow:
            out["shadow_summary"] = summarize_shadow(self.shadow_stats)
        return out


def fuzz(config: FuzzConfig) -> Fuzzer:
    """Build and run a fuzzer; returns it for inspection."""
    f = Fuzzer(config)
    f.run()
    return f


def pct_or_nan(v: Optional[float]) -> float:
    return math.nan if v is None else v
