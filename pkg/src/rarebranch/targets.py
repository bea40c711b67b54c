"""In-process target programs and the coverage recorder they report to.

A target is a compiled function ``entry(data, rec) -> status`` over a uint8
array. It calls ``rec.cover(i)`` on entering its ``i``-th basic block; the
recorder maps ``i`` to the block's random id and bumps the hit counter of the
transition from the previous block. Targets containing unbounded loops must
poll ``rec.exhausted()`` and return once the cover-call budget is spent.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Callable, Dict, Tuple

import numpy as np

from ._jit import JIT_ENABLED, jitclass, njit, types
from .coverage import MAP_MASK, MAP_SIZE, transition_id

OK = 0
CRASH = 1
BUDGET_EXCEEDED = 2

STATUS_NAMES = {OK: "ok", CRASH: "crash", BUDGET_EXCEEDED: "budget-exceeded"}

REGISTRATION_SEED = 0x5EED

if JIT_ENABLED:
    _recorder_spec = [
        ("ids", types.int64[:]),
        ("counts", types.uint32[:]),
        ("touched", types.int64[:]),
        ("prev", types.int64),
        ("n", types.int64),
        ("ntouched", types.int64),
        ("budget", types.int64),
    ]
else:
    _recorder_spec = None


@jitclass(_recorder_spec)
class Recorder:
    def __init__(self, ids, counts, touched, budget):
        self.ids = ids
        self.counts = counts
        self.touched = touched
        self.prev = 0
        self.n = 0
        self.ntouched = 0
        self.budget = budget

    def cover(self, i):
        self.n += 1
        if self.n > self.budget:
            return
        b = self.ids[i]
        idx = ((self.prev >> 1) ^ b) & MAP_MASK
        if self.counts[idx] == 0:
            self.touched[self.ntouched] = idx
            self.ntouched += 1
        self.counts[idx] += 1
        self.prev = b

    def exhausted(self):
        return self.n > self.budget

    def begin(self):
        self.prev = 0
        self.n = 0

    def clear(self):
        for j in range(self.ntouched):
            self.counts[self.touched[j]] = 0
        self.ntouched = 0


def make_recorder(ids: np.ndarray, budget: int):
    counts = np.zeros(MAP_SIZE, dtype=np.uint32)
    touched = np.zeros(MAP_SIZE, dtype=np.int64)
    return Recorder(np.ascontiguousarray(ids, dtype=np.int64), counts, touched, int(budget)), counts, touched


@njit
def _is_blank(c):
    return c == 0x20 or c == 0x09 or c == 0x0A or c == 0x0D


@njit
def _is_alpha(c):
    return (0x41 <= c <= 0x5A) or (0x61 <= c <= 0x7A)


@njit
def _match(data, p, kw, first_block, rec):
    """Byte-by-byte keyword compare; one block per matched byte."""
    for j in range(len(kw)):
        if p + j >= len(data) or data[p + j] != kw[j]:
            return False
        rec.cover(first_block + j)
    return True


# --- nested keyword parser ------------------------------------------------
# Attribute-list declaration parser. Keywords are compared one byte at a time,
# so partial progress on a keyword shows up as new branches.

_ATTLIST = tuple(b"<!ATTLIST")
_CDATA = tuple(b"CDATA")
_ID = tuple(b"ID")
_REQUIRED = tuple(b"#REQUIRED")
_IMPLIED = tuple(b"#IMPLIED")
_FIXED = tuple(b"#FIXED")

NK_ENTRY = 0
NK_LT, NK_GT, NK_ALPHA, NK_DIGIT, NK_BLANK, NK_OTHER = 1, 2, 3, 4, 5, 6
NK_LEX_END = 7
NK_ATTLIST = 8  # 9 blocks
NK_NO_DECL = 17
NK_SKIP1 = 18
NK_CDATA = 19  # 5 blocks
NK_ID = 24  # 2 blocks
NK_BAD_TYPE = 26
NK_SKIP2 = 27
NK_REQUIRED = 28  # 9 blocks
NK_IMPLIED = 37  # 8 blocks
NK_FIXED = 45  # 6 blocks
NK_FIXED_NOBLANK = 51
NK_FIXED_BLANK = 52
NK_DECL_END = 53
NK_BLOCKS = 54


@njit
def nested_keyword(data, rec):
    n = len(data)
    rec.cover(NK_ENTRY)
    for i in range(n):
        c = data[i]
        if c == 0x3C:
            rec.cover(NK_LT)
        elif c == 0x3E:
            rec.cover(NK_GT)
        elif _is_alpha(c):
            rec.cover(NK_ALPHA)
        elif 0x30 <= c <= 0x39:
            rec.cover(NK_DIGIT)
        elif _is_blank(c):
            rec.cover(NK_BLANK)
        else:
            rec.cover(NK_OTHER)
    rec.cover(NK_LEX_END)

    if not _match(data, 0, _ATTLIST, NK_ATTLIST, rec):
        rec.cover(NK_NO_DECL)
        return OK
    p = 9
    while p < n and _is_blank(data[p]):
        rec.cover(NK_SKIP1)
        p += 1
    if _match(data, p, _CDATA, NK_CDATA, rec):
        p += 5
    elif _match(data, p, _ID, NK_ID, rec):
        p += 2
    else:
        rec.cover(NK_BAD_TYPE)
        return OK
    while p < n and _is_blank(data[p]):
        rec.cover(NK_SKIP2)
        p += 1
    if _match(data, p, _REQUIRED, NK_REQUIRED, rec):
        p += 9
    if _match(data, p, _IMPLIED, NK_IMPLIED, rec):
        p += 8
    if _match(data, p, _FIXED, NK_FIXED, rec):
        p += 6
        if p >= n or not _is_blank(data[p]):
            rec.cover(NK_FIXED_NOBLANK)
        else:
            rec.cover(NK_FIXED_BLANK)
    rec.cover(NK_DECL_END)
    return OK


# --- magic number gates -----------------------------------------------------

_MAGIC = tuple(b"BAD!")

MB_ENTRY, MB_B, MB_A, MB_D, MB_BANG, MB_SHORT, MB_EXIT = range(7)


@njit
def magic_bytes(data, rec):
    rec.cover(MB_ENTRY)
    if len(data) < 4:
        rec.cover(MB_SHORT)
        return OK
    if data[0] == _MAGIC[0]:
        rec.cover(MB_B)
        if data[1] == _MAGIC[1]:
            rec.cover(MB_A)
            if data[2] == _MAGIC[2]:
                rec.cover(MB_D)
                if data[3] == _MAGIC[3]:
                    rec.cover(MB_BANG)
                    return CRASH
    rec.cover(MB_EXIT)
    return OK


MW_ENTRY, MW_HIT, MW_SHORT, MW_EXIT = range(4)


@njit
def magic_word(data, rec):
    rec.cover(MW_ENTRY)
    if len(data) < 4:
        rec.cover(MW_SHORT)
        return OK
    word = int(data[0]) << 24 | int(data[1]) << 16 | int(data[2]) << 8 | int(data[3])
    if word == 0x42414421:
        rec.cover(MW_HIT)
        return CRASH
    rec.cover(MW_EXIT)
    return OK


# --- structural targets --------------------------------------------------------

PT_BLOCKS = 8


@njit
def passthrough(data, rec):
    for i in range(PT_BLOCKS):
        rec.cover(i)
    return OK


LONG_INPUT_LEN = 512
RECORD_LEN = 32
LL_ENTRY, LL_BODY, LL_RECORD, LL_LONG, LL_EXIT = range(5)


@njit
def length_loop(data, rec):
    # one block per byte plus one per complete 32-byte record, so hit-count
    # buckets keep growing with the input up to a few kilobytes
    rec.cover(LL_ENTRY)
    for i in range(len(data)):
        rec.cover(LL_BODY)
        if i % RECORD_LEN == RECORD_LEN - 1:
            rec.cover(LL_RECORD)
    if len(data) >= LONG_INPUT_LEN:
        rec.cover(LL_LONG)
    rec.cover(LL_EXIT)
    return OK


HG_ENTRY, HG_LOOP = range(2)


@njit
def hang(data, rec):
    rec.cover(HG_ENTRY)
    while True:
        rec.cover(HG_LOOP)
        if rec.exhausted():
            return OK


# Only the exact key reaches FR_EXACT, so no mutant of the key can hit it.
FRAGILE_KEY = b"FRAGILE-SEED"
_FRAGILE = tuple(FRAGILE_KEY)
FR_ENTRY, FR_LO, FR_HI, FR_EXACT, FR_EXIT = range(5)


@njit
def fragile(data, rec):
    rec.cover(FR_ENTRY)
    if len(data) > 0 and data[0] < 0x80:
        rec.cover(FR_LO)
    else:
        rec.cover(FR_HI)
    if len(data) == len(_FRAGILE):
        same = True
        for i in range(len(data)):
            if data[i] != _FRAGILE[i]:
                same = False
                break
        if same:
            rec.cover(FR_EXACT)
    rec.cover(FR_EXIT)
    return OK


# --- registry -----------------------------------------------------------------


@dataclass(frozen=True)
class TargetProgram:
    name: str
    entry: Callable
    n_blocks: int
    description: str
    deepest: Tuple[int, int]
    deepest_label: str
    block_ids: np.ndarray = field(repr=False, compare=False)

    def branch(self, src: int, dst: int) -> int:
        """Branch id of the transition between two local block indices."""
        return transition_id(int(self.block_ids[src]), int(self.block_ids[dst]))

    @property
    def deepest_branch(self) -> int:
        return self.branch(*self.deepest)


def assign_block_ids(name: str, n_blocks: int) -> np.ndarray:
    rng = np.random.default_rng([REGISTRATION_SEED, zlib.crc32(name.encode())])
    return rng.choice(np.arange(1, MAP_SIZE, dtype=np.int64), size=n_blocks, replace=False)


TARGETS: Dict[str, TargetProgram] = {}


def register(name, entry, n_blocks, description, deepest, deepest_label) -> TargetProgram:
    prog = TargetProgram(
        name=name,
        entry=entry,
        n_blocks=n_blocks,
        description=description,
        deepest=deepest,
        deepest_label=deepest_label,
        block_ids=assign_block_ids(name, n_blocks),
    )
    TARGETS[name] = prog
    return prog


def get_target(name: str) -> TargetProgram:
    try:
        return TARGETS[name]
    except KeyError:
        raise KeyError(f"unknown target {name!r}; available: {', '.join(sorted(TARGETS))}") from None


register(
    "nested_keyword",
    nested_keyword,
    NK_BLOCKS,
    "attribute-list declaration parser with byte-wise keyword compares "
    "('<!ATTLIST', 'CDATA'/'ID', '#REQUIRED'/'#IMPLIED'/'#FIXED')",
    (NK_FIXED + 5, NK_FIXED_NOBLANK),
    "missing blank after '#FIXED'",
)
register(
    "magic_bytes",
    magic_bytes,
    7,
    "crash behind the magic prefix 'BAD!', compared one byte at a time",
    (MB_D, MB_BANG),
    "magic prefix matched (crash)",
)
register(
    "magic_word",
    magic_word,
    4,
    "crash behind the magic prefix 'BAD!', compared as one 32-bit word",
    (MW_ENTRY, MW_HIT),
    "magic word matched (crash)",
)
register(
    "passthrough",
    passthrough,
    PT_BLOCKS,
    "straight-line code independent of the input",
    (PT_BLOCKS - 2, PT_BLOCKS - 1),
    "last straight-line block",
)
register(
    "length_loop",
    length_loop,
    5,
    f"loop over every byte and every {RECORD_LEN}-byte record; extra branch for inputs of at least "
    f"{LONG_INPUT_LEN} bytes",
    (LL_LONG, LL_EXIT),
    f"input length >= {LONG_INPUT_LEN}",
)
register(
    "hang",
    hang,
    2,
    "never terminates on its own; always exceeds the execution budget",
    (HG_ENTRY, HG_LOOP),
    "loop entered",
)
register(
    "fragile",
    fragile,
    5,
    f"branch reached only by the exact input {FRAGILE_KEY.decode()!r}",
    (FR_LO, FR_EXACT),
    "exact key matched",
)
