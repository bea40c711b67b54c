"""Coverage-guided greybox fuzzing with rare-branch targeting and branch masks."""

from ._jit import JIT_ENABLED
from .coverage import (
    MAP_SIZE,
    GlobalCoverage,
    RarityState,
    bucketize,
    signature,
    transition_id,
)
from .executor import BudgetExhausted, ExecOutcome, Executor, Status, run
from .fuzzer import FuzzConfig, Fuzzer, ShadowStats, fuzz
from .mask import BranchMask, compute_mask, mask_on_delete, mask_on_insert, modifiable_positions
from .mutators import deterministic_pass, havoc_pass, performance_score
from .scheduler import (
    Queue,
    QueueEntry,
    TargetBranch,
    baseline_is_worth_fuzzing,
    exclude_branch,
    hits_rare_branch,
    rarity_cutoff,
)
from .targets import TARGETS, TargetProgram, get_target
from .trimmer import trim_to_path, trim_to_target

__all__ = [
    "JIT_ENABLED", "MAP_SIZE", "GlobalCoverage", "RarityState", "bucketize", "signature", "transition_id",
    "BudgetExhausted", "ExecOutcome", "Executor", "Status", "run",
    "FuzzConfig", "Fuzzer", "ShadowStats", "fuzz",
    "BranchMask", "compute_mask", "mask_on_delete", "mask_on_insert", "modifiable_positions",
    "deterministic_pass", "havoc_pass", "performance_score",
    "Queue", "QueueEntry", "TargetBranch", "baseline_is_worth_fuzzing", "exclude_branch",
    "hits_rare_branch", "rarity_cutoff",
    "TARGETS", "TargetProgram", "get_target", "trim_to_path", "trim_to_target",
]
