"""Deterministic and havoc mutation stages, optionally restricted by a branch mask.

Deterministic mutants are single patches ``(pos, width, new bytes)`` over the
seed, generated with numpy and executed in bulk. Havoc mutants are built by a
compiled kernel that stacks random operators; each mutant draws from its own
xorshift32 stream seeded from the caller's ``numpy.random.Generator``, which
is what lets a masked and an unmasked havoc run be paired mutant by mutant.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from ._jit import njit
from .executor import HIT, Executor, as_input
from .mask import BranchMask

ARITH_MAX = 35
HAVOC_BLOCK_P = 16  # block lengths are geometric with this mean
HAVOC_RETRIES = 8
HAVOC_CHUNK = 256
MAX_INPUT_LEN = 8192

SCORE_BASE = 256
SCORE_MIN = 32
SCORE_MAX = 4096

INTERESTING_8 = (-128, -1, 0, 1, 16, 32, 64, 100, 127)
INTERESTING_16 = INTERESTING_8 + (-32768, -129, 128, 255, 256, 512, 1000, 1024, 4096, 32767)
INTERESTING_32 = INTERESTING_16 + (-2147483648, -100663046, -32769, 32768, 65535, 65536, 100663045, 2147483647)

_INT8 = np.array(INTERESTING_8, dtype=np.int64) & 0xFF
_INT16 = np.array(INTERESTING_16, dtype=np.int64) & 0xFFFF
_INT32 = np.array(INTERESTING_32, dtype=np.int64) & 0xFFFFFFFF

DET_STAGES = (
    "flip1", "flip2", "flip4", "flip8", "flip16", "flip32",
    "arith8", "arith16", "arith32",
    "int8", "int16", "int32",
)
# byte flips double as the overwrite probe of the mask computation
CALIBRATION_STAGE = "flip8"

OP_OVERWRITE_BYTE, OP_INTERESTING, OP_ARITH, OP_DELETE, OP_INSERT, OP_OVERWRITE_BLOCK = range(6)
N_HAVOC_OPS = 6
OP_KIND = {
    OP_OVERWRITE_BYTE: "overwrite", OP_INTERESTING: "overwrite", OP_ARITH: "overwrite",
    OP_OVERWRITE_BLOCK: "overwrite", OP_DELETE: "delete", OP_INSERT: "insert",
}


@dataclass
class StageStats:
    generated: int = 0
    hits: int = 0

    @property
    def pct(self) -> Optional[float]:
        return 100.0 * self.hits / self.generated if self.generated else None

    def __iadd__(self, other: "StageStats") -> "StageStats":
        self.generated += other.generated
        self.hits += other.hits
        return self


def performance_score(entry, avg_exec_cost: float, avg_length: float) -> int:
    """Havoc budget: cheaper and shorter than average earns more mutants."""
    s = SCORE_BASE * (avg_exec_cost / max(entry.exec_cost, 1)) * (avg_length / max(len(entry.input), 1))
    return int(min(max(s, SCORE_MIN), SCORE_MAX))


# -- deterministic stages -------------------------------------------------------------

Patches = Tuple[np.ndarray, np.ndarray, np.ndarray]


def _pack(data: np.ndarray, pos: np.ndarray, width: int) -> np.ndarray:
    """Little-endian packing of ``data[pos:pos+width]`` for every start in ``pos``."""
    v = np.zeros(len(pos), dtype=np.int64)
    for j in range(width):
        v |= data[pos + j].astype(np.int64) << (8 * j)
    return v


def _bswap(v: np.ndarray, width: int) -> np.ndarray:
    out = np.zeros_like(v)
    for j in range(width):
        out |= ((v >> (8 * j)) & 0xFF) << (8 * (width - 1 - j))
    return out


def _changed_bytes(a: np.ndarray, b: np.ndarray, width: int) -> np.ndarray:
    x = a ^ b
    return sum(((x >> (8 * j)) & 0xFF) != 0 for j in range(width))


def _bitflips(data: np.ndarray, nbits: int) -> Patches:
    n = len(data)
    starts = np.arange(max(8 * n - nbits + 1, 0), dtype=np.int64)
    pos = starts >> 3
    width = ((starts + nbits - 1) >> 3) - pos + 1
    flip = np.zeros(len(starts), dtype=np.int64)
    for t in range(nbits):
        bit = starts + t
        flip |= (0x80 >> (bit & 7)) << (8 * ((bit >> 3) - pos))
    safe = np.minimum(pos + 1, n - 1) if n else pos
    orig = data[pos].astype(np.int64) | np.where(width > 1, data[safe].astype(np.int64) << 8, 0)
    return pos, width, orig ^ flip


def _byteflips(data: np.ndarray, width: int) -> Patches:
    pos = np.arange(max(len(data) - width + 1, 0), dtype=np.int64)
    return pos, np.full(len(pos), width, dtype=np.int64), _pack(data, pos, width) ^ ((1 << (8 * width)) - 1)


def _values_stage(data: np.ndarray, width: int, deltas_or_values: np.ndarray, arith: bool) -> Patches:
    """Arithmetic (``arith``) or interesting-value substitution over every position."""
    pos = np.arange(max(len(data) - width + 1, 0), dtype=np.int64)
    full = (1 << (8 * width)) - 1
    orig_le = _pack(data, pos, width)
    out_pos, out_val = [], []
    orders = (False,) if width == 1 else (False, True)
    for big_endian in orders:
        orig = _bswap(orig_le, width) if big_endian else orig_le
        if arith:
            new = (orig[:, None] + deltas_or_values[None, :]) & full
        else:
            new = np.broadcast_to(deltas_or_values[None, :], (len(pos), len(deltas_or_values)))
        new_le = _bswap(new, width) if big_endian else new
        keep = _changed_bytes(new_le, orig_le[:, None], width) >= (2 if width > 1 else 1)
        out_pos.append(np.broadcast_to(pos[:, None], new.shape)[keep])
        out_val.append(new_le[keep])
    p = np.concatenate(out_pos)
    v = np.concatenate(out_val)
    if width > 1 and len(p):
        # the two byte orders can produce the same bytes; keep the first
        _, first = np.unique(np.stack([p, v]), axis=1, return_index=True)
        first.sort()
        p, v = p[first], v[first]
    return p, np.full(len(p), width, dtype=np.int64), v


_ARITH_DELTAS = np.concatenate([np.arange(1, ARITH_MAX + 1), -np.arange(1, ARITH_MAX + 1)]).astype(np.int64)


def stage_patches(data: np.ndarray, stage: str) -> Patches:
    """All patches of one deterministic stage, in execution order."""
    if stage.startswith("flip"):
        bits = int(stage[4:])
        return _bitflips(data, bits) if bits < 8 else _byteflips(data, bits // 8)
    if stage.startswith("arith"):
        width = int(stage[5:]) // 8
        return _values_stage(data, width, _ARITH_DELTAS, arith=True)
    if stage.startswith("int"):
        width = int(stage[3:]) // 8
        table = {1: _INT8, 2: _INT16, 4: _INT32}[width]
        return _values_stage(data, width, table, arith=False)
    raise ValueError(f"unknown deterministic stage {stage!r}")


def admissible(pos: np.ndarray, width: np.ndarray, overwritable: np.ndarray) -> np.ndarray:
    """Patches whose every touched position is overwritable."""
    csum = np.concatenate([[0], np.cumsum(overwritable, dtype=np.int64)])
    return (csum[pos + width] - csum[pos]) == width


def deterministic_pass(
    seed,
    executor: Executor,
    mask: Optional[BranchMask] = None,
    target: int = -1,
    stages: Sequence[str] = DET_STAGES,
) -> Dict[str, StageStats]:
    """Run each stage's patches through ``executor``; masked patches are skipped."""
    data = as_input(seed)
    if mask is not None and len(mask) != len(data):
        raise ValueError("mask length does not match seed length")
    out = {}
    for stage in stages:
        pos, width, val = stage_patches(data, stage)
        if mask is not None:
            keep = admissible(pos, width, mask.overwritable)
            pos, width, val = pos[keep], width[keep], val[keep]
        flags = executor.run_patches(data, pos, width, val, target) if len(pos) else np.zeros(0, np.uint8)
        out[stage] = StageStats(len(pos), int(np.count_nonzero(flags & HIT)))
    return out


# -- havoc ---------------------------------------------------------------------------


@njit(cache=True)
def _rand(state, limit):
    x = state[0]
    x ^= (x << 13) & 0xFFFFFFFF
    x ^= x >> 17
    x ^= (x << 5) & 0xFFFFFFFF
    state[0] = x
    return x % limit


# bits of the packed per-position mask used inside the havoc kernel
M_OW, M_DL, M_INS = 1, 2, 4
M_ALL = M_OW | M_DL | M_INS


@njit(cache=True)
def _pick(cm, bit, n, count, state):
    """Uniform position among the ``count`` entries of ``cm[:n]`` with ``bit`` set."""
    if count <= 0:
        return -1
    if count == n:
        return _rand(state, n)
    if 4 * count >= n:
        # dense: rejection sampling is uniform and avoids a scan
        while True:
            i = _rand(state, n)
            if cm[i] & bit:
                return i
    k = _rand(state, count)
    for i in range(n):
        if cm[i] & bit:
            if k == 0:
                return i
            k -= 1
    return -1


@njit(cache=True)
def _run_length(cm, bit, start, n):
    r = 0
    while start + r < n and cm[start + r] & bit:
        r += 1
    return r


@njit(cache=True)
def _block_len_in_run(state, cm, bit, site, cap):
    """Like ``_block_len(state, min(cap, run))`` where ``run`` is the length of
    the flagged run starting at ``site``, without scanning the whole run."""
    b = 1
    while b < cap and cm[site + b] & bit and _rand(state, HAVOC_BLOCK_P) != 0:
        b += 1
    return b


@njit(cache=True)
def _block_len(state, cap):
    b = 1
    while b < cap and _rand(state, HAVOC_BLOCK_P) != 0:
        b += 1
    return b


@njit(cache=True)
def _count(cm, bit, a, b):
    c = 0
    for i in range(a, b):
        if cm[i] & bit:
            c += 1
    return c


@njit(cache=True)
def _shift_left(a, start, by, end):
    """a[start:end-by] = a[start+by:end] without a temporary."""
    for i in range(start, end - by):
        a[i] = a[i + by]


@njit(cache=True)
def _shift_right(a, start, by, end):
    """a[start+by:end+by] = a[start:end] without a temporary."""
    for i in range(end - 1, start - 1, -1):
        a[i + by] = a[i]


@njit(cache=True)
def pack_mask(ow, dl, ins, out):
    n = len(ow)
    for i in range(n):
        out[i] = (M_OW if ow[i] else 0) | (M_DL if dl[i] else 0) | (M_INS if ins[i] else 0)
    out[n] = M_INS if ins[n] else 0


@njit(cache=True)
def havoc_fill(seed, cm0, seeds, max_len, out_buf, out_offs, cur, cm, tmp, log, log_len):
    """Build ``len(seeds)`` stacked-havoc mutants of ``seed`` into ``out_buf``.

    ``cm0`` is the packed mask (see :func:`pack_mask`) restricting operator
    sites; the working copy follows every insertion and deletion. When
    ``log_len`` > 0 each applied operator is recorded in ``log`` as
    ``(mutant, op, site, length)``.
    """
    state = np.zeros(1, dtype=np.int64)
    n0 = len(seed)
    nlog = 0
    out_offs[0] = 0
    for m in range(len(seeds)):
        state[0] = seeds[m]
        L = n0
        for i in range(n0):
            cur[i] = seed[i]
        for i in range(n0 + 1):
            cm[i] = cm0[i]
        n_ow = _count(cm, M_OW, 0, L)
        n_dl = _count(cm, M_DL, 0, L)
        n_ins = _count(cm, M_INS, 0, L + 1)
        # an all-true mask stays all-true, so its bookkeeping can be skipped
        full = n_ow == L and n_dl == L and n_ins == L + 1
        stack = 1 << (1 + _rand(state, 7))
        for s in range(stack):
            for attempt in range(HAVOC_RETRIES):
                op = _rand(state, N_HAVOC_OPS)
                site = -1
                blen = 1
                if op == OP_OVERWRITE_BYTE:
                    site = _pick(cm, M_OW, L, n_ow, state)
                    if site < 0:
                        continue
                    cur[site] = cur[site] ^ (1 + _rand(state, 255))
                elif op == OP_INTERESTING:
                    w = 1 << _rand(state, 3)
                    site = _pick(cm, M_OW, L, n_ow, state)
                    if site < 0 or (L - site if full else _run_length(cm, M_OW, site, min(L, site + w))) < w:
                        continue
                    if w == 1:
                        v = _INT8[_rand(state, len(_INT8))]
                    elif w == 2:
                        v = _INT16[_rand(state, len(_INT16))]
                    else:
                        v = _INT32[_rand(state, len(_INT32))]
                    big = _rand(state, 2) == 1
                    for j in range(w):
                        sh = 8 * (w - 1 - j) if big else 8 * j
                        cur[site + j] = (v >> sh) & 0xFF
                    blen = w
                elif op == OP_ARITH:
                    site = _pick(cm, M_OW, L, n_ow, state)
                    if site < 0:
                        continue
                    d = 1 + _rand(state, ARITH_MAX)
                    if _rand(state, 2) == 1:
                        cur[site] = (int(cur[site]) + d) & 0xFF
                    else:
                        cur[site] = (int(cur[site]) - d) & 0xFF
                elif op == OP_DELETE:
                    if L < 2:
                        continue
                    site = _pick(cm, M_DL, L, n_dl, state)
                    if site < 0:
                        continue
                    if full:
                        blen = _block_len(state, min(L - site, L - 1))
                    else:
                        blen = _block_len_in_run(state, cm, M_DL, site, min(L - site, L - 1))
                        n_ow -= _count(cm, M_OW, site, site + blen)
                        n_ins -= _count(cm, M_INS, site, site + blen)
                        _shift_left(cm, site, blen, L + 1)
                    n_dl -= blen
                    _shift_left(cur, site, blen, L)
                    L -= blen
                    if full:
                        n_ow = L
                        n_ins = L + 1
                elif op == OP_INSERT:
                    if L >= max_len:
                        continue
                    site = _pick(cm, M_INS, L + 1, n_ins, state)
                    if site < 0:
                        continue
                    blen = _block_len(state, max_len - L)
                    if _rand(state, 4) != 0:
                        blen = min(blen, L)
                        src = _rand(state, L - blen + 1)
                        for i in range(blen):
                            tmp[i] = cur[src + i]
                    else:
                        v = _rand(state, 256)
                        for i in range(blen):
                            tmp[i] = v
                    _shift_right(cur, site, blen, L)
                    for i in range(blen):
                        cur[site + i] = tmp[i]
                    if not full:
                        _shift_right(cm, site, blen, L + 1)
                        for i in range(blen):
                            cm[site + i] = M_ALL
                    n_ow += blen
                    n_dl += blen
                    n_ins += blen
                    L += blen
                else:
                    if L < 2:
                        continue
                    site = _pick(cm, M_OW, L, n_ow, state)
                    if site < 0:
                        continue
                    if full:
                        blen = _block_len(state, L - site)
                    else:
                        blen = _block_len_in_run(state, cm, M_OW, site, L - site)
                    if _rand(state, 4) != 0:
                        src = _rand(state, L - blen + 1)
                        for i in range(blen):
                            tmp[i] = cur[src + i]
                    else:
                        v = _rand(state, 256)
                        for i in range(blen):
                            tmp[i] = v
                    for i in range(blen):
                        cur[site + i] = tmp[i]
                if log_len > 0 and nlog < log_len:
                    log[nlog, 0] = m
                    log[nlog, 1] = op
                    log[nlog, 2] = site
                    log[nlog, 3] = blen
                    nlog += 1
                break
        base = out_offs[m]
        for i in range(L):
            out_buf[base + i] = cur[i]
        out_offs[m + 1] = base + L
    return nlog


def draw_havoc_seeds(rng: np.random.Generator, count: int) -> np.ndarray:
    """Per-mutant stream seeds (non-zero, as xorshift32 requires)."""
    return rng.integers(1, 1 << 32, size=count, dtype=np.int64)


class HavocWorkspace:
    def __init__(self, max_len: int = MAX_INPUT_LEN, chunk: int = HAVOC_CHUNK) -> None:
        self.max_len = max_len
        self.chunk = chunk
        self.cur = np.empty(max_len, dtype=np.uint8)
        self.cm = np.empty(max_len + 1, dtype=np.uint8)
        self.cm0 = np.empty(max_len + 1, dtype=np.uint8)
        self.tmp = np.empty(max_len, dtype=np.uint8)
        self.out = np.empty(chunk * max_len, dtype=np.uint8)
        self.offs = np.zeros(chunk + 1, dtype=np.int64)
        self.no_log = np.zeros((0, 4), dtype=np.int64)


def _packed_mask(mask: Optional[BranchMask], n: int, out: np.ndarray) -> np.ndarray:
    if mask is None:
        out[:n] = M_ALL
        out[n] = M_INS
    elif len(mask) != n:
        raise ValueError("mask length does not match seed length")
    else:
        pack_mask(mask.overwritable, mask.deletable, mask.insertable, out)
    return out[:n + 1]


def havoc_mutants(seed, seeds: np.ndarray, mask: Optional[BranchMask] = None,
                  max_len: int = MAX_INPUT_LEN, log: bool = False):
    """Generate havoc mutants without executing them.

    Returns ``(buf, offs, oplog)``; ``oplog`` rows are ``(mutant, op, site, length)``.
    """
    data = as_input(seed)[:max_len]
    ws = HavocWorkspace(max_len, max(len(seeds), 1))
    cm0 = _packed_mask(mask, len(data), ws.cm0)
    offs = np.zeros(len(seeds) + 1, dtype=np.int64)
    oplog = np.zeros((len(seeds) * 128 if log else 0, 4), dtype=np.int64)
    n = havoc_fill(data, cm0, np.asarray(seeds, dtype=np.int64), max_len, ws.out, offs,
                   ws.cur, ws.cm, ws.tmp, oplog, len(oplog))
    return ws.out[:offs[-1]].copy(), offs, oplog[:n]


def havoc_pass(
    seed,
    executor: Executor,
    score: int,
    rng: Optional[np.random.Generator] = None,
    mask: Optional[BranchMask] = None,
    target: int = -1,
    max_len: int = MAX_INPUT_LEN,
    seeds: Optional[np.ndarray] = None,
    workspace: Optional[HavocWorkspace] = None,
) -> StageStats:
    """Generate and execute ``score`` havoc mutants of ``seed``.

    Pass the same ``seeds`` (see :func:`draw_havoc_seeds`) to replay an
    identical random stream, e.g. for a masked versus unmasked comparison.
    """
    if score < 1:
        raise ValueError("havoc score must be >= 1")
    if seeds is None:
        seeds = draw_havoc_seeds(rng, score)
    data = as_input(seed)[:max_len]
    ws = workspace if workspace is not None and workspace.max_len == max_len else HavocWorkspace(max_len)
    cm0 = _packed_mask(mask, len(data), ws.cm0)
    stats = StageStats()
    for a in range(0, score, ws.chunk):
        chunk = seeds[a:a + ws.chunk]
        havoc_fill(data, cm0, chunk, max_len, ws.out, ws.offs, ws.cur, ws.cm, ws.tmp, ws.no_log, 0)
        offs = ws.offs[:len(chunk) + 1]
        flags = executor.run_buffers(ws.out[:offs[-1]], offs, target)
        stats += StageStats(len(chunk), int(np.count_nonzero(flags & HIT)))
    return stats
