import pytest
from hypothesis import given, settings, strategies as st

from rcuguard.corpus import corpus_root
from rcuguard.lang import parse
from rcuguard.machine import (
    UNDEF_VAL, HeapError, Loc, Machine, MachineFault, compile_thread, format_heap, list_heap,
    parse_heap, tree_heap,
)

HEADER = "fields { Next: rcu; data: normal; }\nroot head;\n"


def program(body: str, readers: str = "") -> Machine:
    return Machine(parse(HEADER + "writer w {\n rcu_write {\n" + body + "\n }\n}\n" + readers))


def run(m: Machine, st0, tid: str, n: int):
    for _ in range(n):
        st0 = m.step(st0, tid)
    return st0


READER = "reader r * 2 { rcu_read { p = head; c = p.Next; d = c.data; } }"


def test_write_begin_takes_the_lock():
    m = program("skip;", READER)
    s = m.init(list_heap(2))
    assert s.lock is None and m.enabled(s, "w")
    s = m.step(s, "w")
    assert s.lock == "w"


def test_sync_stop_waits_for_the_bounding_set():
    m = program("SyncStart; SyncStop;", READER)
    s = m.init(list_heap(2))
    s = m.step(s, "r.1")              # r.1 enters its read section
    s = run(m, s, "w", 2)             # WriteBegin, SyncStart
    assert s.B == {"r.1"}
    assert not m.enabled(s, "w")      # SyncStop blocks
    s = run(m, s, "r.1", 4)           # finish the reader
    assert s.R == frozenset() and s.B == frozenset()
    assert m.enabled(s, "w")


def test_read_end_shrinks_reader_and_bounding_sets():
    m = program("SyncStart; SyncStop;", READER)
    s = m.init(list_heap(2))
    s = m.step(s, "r.1")
    s = m.step(s, "r.2")
    s = run(m, s, "w", 2)
    assert s.R == {"r.1", "r.2"} and s.B == {"r.1", "r.2"}
    s = run(m, s, "r.1", 4)
    assert s.R == {"r.2"} and s.B == {"r.2"}


def test_skip_compiles_to_nothing_and_threads_finish():
    m = program("skip;")
    s = m.init(list_heap(1))
    s = run(m, s, "w", 2)
    assert s.all_done()
    assert not m.enabled(s, "w")


def test_free_tombstones_only_the_target():
    m = program("p = head; c = p.Next; n = c.Next; p.Next = n; SyncStart; SyncStop; Free(c);")
    s = m.init(list_heap(3))
    before = dict(s.heap)
    s = run(m, s, "w", 9)
    assert s.heap[1] == (UNDEF_VAL, UNDEF_VAL)
    assert 1 in s.freed
    for o in (2, 3):
        assert s.heap[o] == before[o]
    assert s.heap[0] == (Loc(2), 0)


def test_read_after_premature_free_is_use_after_free():
    body = "p = head; c = p.Next; n = c.Next; p.Next = n; Free(c);"
    m = program(body, READER)
    s = m.init(list_heap(3))
    s = run(m, s, "r.1", 3)            # reader holds c = node 1
    s = run(m, s, "w", 7)              # writer unlinks and frees node 1
    with pytest.raises(MachineFault) as e:
        m.step(s, "r.1")
    assert e.value.fault.kind == "UseAfterFree"


def test_null_deref_and_double_free():
    m = program("p = head; c = p.Next; d = c.Next;")
    s = m.init(list_heap(0))
    s = run(m, s, "w", 3)
    with pytest.raises(MachineFault) as e:
        m.step(s, "w")
    assert e.value.fault.kind == "NullDeref"

    m = program("p = head; c = p.Next; Free(c); Free(c);")
    s = run(m, m.init(list_heap(1)), "w", 4)
    with pytest.raises(MachineFault) as e:
        m.step(s, "w")
    assert e.value.fault.kind == "DoubleFree"


def test_storing_the_root_faults():
    m = program("p = head; c = p.Next; c.Next = p;")
    s = run(m, m.init(list_heap(1)), "w", 3)
    with pytest.raises(MachineFault) as e:
        m.step(s, "w")
    assert e.value.fault.kind == "RootOverwrite"


def test_alloc_picks_the_least_unused_location():
    m = program("a = new; b = new;")
    s = run(m, m.init(list_heap(2)), "w", 3)
    assert s.var("w", "a") == Loc(3) and s.var("w", "b") == Loc(4)
    assert s.heap[3] == (None, 0)


def test_init_checks_the_tree_shape():
    m = program("skip;")
    assert m.init(list_heap(3)).rt == 0
    assert m.init(list_heap(0)).heap == {0: (None, 0)}
    with pytest.raises(HeapError, match="two parents"):
        m.init([(0, {"Next": 1}), (1, {"Next": 2}), (2, {"Next": 1})])
    with pytest.raises(HeapError, match="reachable"):
        m.init([(0, {"Next": None}), (1, {"Next": None})])
    with pytest.raises(HeapError, match="missing"):
        m.init([(0, {"Next": 7})])
    with pytest.raises(HeapError, match="unknown field"):
        m.init([(0, {"Prev": None})])


def test_tree_with_two_parents_rejected():
    bst = parse((corpus_root() / "pos/bst_delete.rcu").read_text())
    m = Machine(bst)
    bad = [(0, {"Right": 1}), (1, {"Left": 2, "Right": 2, "data": 5}), (2, {"data": 3})]
    with pytest.raises(HeapError):
        m.init(bad)


def test_heap_text_round_trip():
    for cells in (list_heap(3), tree_heap([5, 3, 8, 7])):
        assert parse_heap(format_heap(cells)) == cells
    with pytest.raises(HeapError, match="line 1"):
        parse_heap("0, Next=1")


def test_compiled_loop_jumps_back():
    p = parse((corpus_root() / "pos/bag_member.rcu").read_text())
    code = compile_thread(p.threads[0].body)
    ops = [i.op for i in code]
    assert ops[0] == "begin_read" and ops[-1] == "end_read"
    assert "loop_nn" in ops and "jump" in ops
    jump = next(i for i in code if i.op == "jump")
    assert code[jump.target].op == "loop_nn"


def test_heap_access_outside_a_section_faults():
    src = HEADER + "writer w { rcu_write { skip; } x = head; y = x.Next; }\n"
    m = Machine(parse(src))
    s = run(m, m.init(list_heap(1)), "w", 2)
    with pytest.raises(MachineFault) as e:
        m.step(s, "w")
    assert e.value.fault.kind == "OutsideCriticalSection"


# -- random-schedule invariants ------------------------------------------------------

CORPUS = ["pos/bag_remove.rcu", "pos/bag_add.rcu", "pos/bst_delete.rcu"]


def _heap_for(m: Machine):
    return list_heap(3) if len(m.rcu) == 1 else tree_heap([5, 3, 8, 7])


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(CORPUS), st.lists(st.integers(0, 5), max_size=60))
def test_step_invariants_on_random_schedules(name, choices):
    m = Machine(parse((corpus_root() / name).read_text()), reader_count=2)
    s = m.init(_heap_for(m))
    synced = False
    for c in choices:
        tids = m.enabled_tids(s)
        if not tids:
            break
        tid = tids[c % len(tids)]
        i = m.index[tid]
        nxt = m.step(s, tid)
        # determinism
        assert m.step(s, tid).key() == nxt.key()
        # frame: other threads' stacks and pcs are untouched
        for j, _ in enumerate(m.threads):
            if j != i:
                assert nxt.stacks[j] == s.stacks[j] and nxt.pcs[j] == s.pcs[j]
        # lock exclusion and the writer never reads
        assert nxt.lock is None or nxt.lock not in nxt.R
        # grace monotonicity: B only shrinks between SyncStart and SyncStop
        ins = m.pending(s, tid)
        if ins.op == "sync_start":
            synced = True
        elif ins.op == "sync_stop":
            synced = False
        elif synced:
            assert nxt.B <= s.B
        assert s.rt in nxt.heap
        s = nxt
