from __future__ import annotations

import numpy as np
import pytest

from rarebranch import targets as T
from rarebranch.coverage import MAP_SIZE, signature, transition_id
from rarebranch.executor import HIT, NEW, BudgetExhausted, Executor, Status, run
from rarebranch.targets import TARGETS, assign_block_ids, get_target


def path_map(prog, blocks) -> np.ndarray:
    """Expected dense map for a known sequence of local block indices."""
    m = np.zeros(MAP_SIZE, dtype=np.uint32)
    prev = 0
    for i in blocks:
        b = int(prog.block_ids[i])
        m[transition_id(prev, b)] += 1
        prev = b
    return m


def test_passthrough_cost_and_map():
    prog = get_target("passthrough")
    out = run(prog, b"anything")
    assert out.status == Status.OK
    assert out.cost == T.PT_BLOCKS
    assert np.array_equal(out.map, path_map(prog, range(T.PT_BLOCKS)))


@pytest.mark.parametrize(
    ("data", "status", "blocks"),
    [
        (b"BAD!", Status.CRASH, [T.MB_ENTRY, T.MB_B, T.MB_A, T.MB_D, T.MB_BANG]),
        (b"BAD?", Status.OK, [T.MB_ENTRY, T.MB_B, T.MB_A, T.MB_D, T.MB_EXIT]),
        (b"XAD!", Status.OK, [T.MB_ENTRY, T.MB_EXIT]),
        (b"BA", Status.OK, [T.MB_ENTRY, T.MB_SHORT]),
    ],
)
def test_magic_bytes_paths(data, status, blocks):
    prog = get_target("magic_bytes")
    out = run(prog, data)
    assert out.status == status
    assert np.array_equal(out.map, path_map(prog, blocks))


def test_magic_word_crash():
    assert run(get_target("magic_word"), b"BAD!...").status == Status.CRASH
    assert run(get_target("magic_word"), b"BAD?").status == Status.OK


@pytest.mark.parametrize("budget", [1, 10, 1000])
def test_hang_exhausts_budget_exactly(budget):
    out = run(get_target("hang"), b"x", budget=budget)
    assert out.status == Status.BUDGET_EXCEEDED
    assert out.cost == budget
    assert int(out.map.sum()) == budget


def test_nested_keyword_reaches_deepest_branch():
    prog = get_target("nested_keyword")
    deep = prog.deepest_branch
    assert run(prog, b"<!ATTLIST ID #FIXED").map[deep] == 1
    assert run(prog, b"<!ATTLIST CDATA #REQUIRED#IMPLIED#FIXED\"x\"").map[deep] == 1
    assert run(prog, b"<!ATTLIST ID #FIXED \"x\"").map[deep] == 0
    assert run(prog, b"<!ATTLIST ID #FIXEX").map[deep] == 0


def test_length_loop_long_branch():
    prog = get_target("length_loop")
    deep = prog.deepest_branch
    assert run(prog, b"a" * (T.LONG_INPUT_LEN - 1)).map[deep] == 0
    assert run(prog, b"a" * T.LONG_INPUT_LEN).map[deep] == 1


def test_runs_are_deterministic():
    prog = get_target("nested_keyword")
    a = run(prog, b"<!ATTLIST CDATA #IMPLIED")
    b = run(prog, b"<!ATTLIST CDATA #IMPLIED")
    assert np.array_equal(a.map, b.map) and a.status == b.status and a.cost == b.cost


def test_registry():
    assert {"nested_keyword", "magic_bytes", "magic_word", "passthrough", "length_loop"} <= set(TARGETS)
    for prog in TARGETS.values():
        assert prog.description and prog.deepest_label
        assert len(set(prog.block_ids.tolist())) == prog.n_blocks
        assert np.array_equal(prog.block_ids, assign_block_ids(prog.name, prog.n_blocks))
    with pytest.raises(KeyError, match="available"):
        get_target("nope")


def test_run_and_maybe_save_semantics():
    ex = Executor(get_target("magic_bytes"))
    r = ex.run_and_maybe_save(b"XXXX")
    assert r.saved and r.entry.id == 0
    br = ex.target.branch(T.MB_ENTRY, T.MB_EXIT)
    assert ex.rarity.input_hits[br] == 1
    r = ex.run_and_maybe_save(b"YYYY")
    assert not r.saved
    assert ex.rarity.input_hits[br] == 2
    r = ex.run_and_maybe_save(b"BXXX")
    assert r.saved
    assert len(ex.queue) == 2


def test_crash_store():
    ex = Executor(get_target("magic_bytes"))
    ex.run_and_maybe_save(b"BAD!")
    ex.run_and_maybe_save(b"BAD!!")  # same path, not saved
    assert len(ex.crashes) == 1 and ex.crashes[0].crashed


def test_shadow_has_no_side_effects():
    ex = Executor(get_target("nested_keyword"))
    ex.add_seed(b"<!ATTLIST")
    before = ex.state_fingerprint()
    with ex.shadow():
        r = ex.run_and_maybe_save(b"<!ATTLIST ID #FIXED")
        ex.run_inputs([b"zzz", b"<!ATT", b"<!ATTLIST CDATA"])
    assert not r.saved
    assert ex.state_fingerprint() == before
    assert len(ex.queue) == 1
    assert ex.execs == 5


def test_batch_and_single_paths_agree():
    prog = get_target("nested_keyword")
    inputs = [b"<", b"<!", b"<!ATTLIST", b"<!ATTLIST ID", b"<!ATTLIST ID", b"abc", b"<!ATTLIST CDATA #FIXED",
              b"<!ATTLIST CDATA #FIXED x"]
    a = Executor(prog)
    for d in inputs:
        a.run_and_maybe_save(d)
    b = Executor(prog)
    flags = b.run_inputs(inputs)
    assert a.state_fingerprint() == b.state_fingerprint()
    assert [e.input for e in a.queue] == [e.input for e in b.queue]
    assert [e.signature for e in a.queue] == [e.signature for e in b.queue]
    assert [e.found_at for e in a.queue] == [e.found_at for e in b.queue]
    assert int(np.count_nonzero(flags & NEW)) == len(b.queue)


def test_run_patches_matches_materialized_inputs():
    prog = get_target("magic_bytes")
    seed = np.frombuffer(b"BAD?xy", dtype=np.uint8).copy()
    pos = np.array([3, 0, 4, 2])
    width = np.array([1, 1, 2, 1])
    val = np.array([ord("!"), ord("C"), 0x4142, ord("D")])
    a = Executor(prog)
    fa = a.run_patches(seed, pos, width, val, target=prog.deepest_branch)
    mats = [b"BAD!xy", b"CAD?xy", b"BAD?BA", b"BAD?xy"]
    b = Executor(prog)
    fb = b.run_inputs(mats, target=prog.deepest_branch)
    assert fa.tolist() == fb.tolist()
    assert [e.input for e in a.queue] == [e.input for e in b.queue]
    assert (fa & HIT).tolist() == [HIT, 0, 0, 0]


def test_exec_limit():
    ex = Executor(get_target("passthrough"), exec_limit=3)
    ex.run_and_maybe_save(b"a")
    with pytest.raises(BudgetExhausted):
        ex.run_inputs([b"b", b"c", b"d"])
    assert ex.execs == 3
    with pytest.raises(BudgetExhausted):
        ex.run_and_maybe_save(b"e")


def test_signature_of_saved_entry_matches_run():
    prog = get_target("nested_keyword")
    ex = Executor(prog)
    e = ex.add_seed(b"<!ATTLIST ID")
    assert e.signature == signature(run(prog, b"<!ATTLIST ID").map)
