import pytest

from rcuguard.checker import (
    CheckFailure, SiteCountError, annotate_diff, check_atomic, check_block, check_program,
    check_stmt, read_golden,
)
from rcuguard.corpus import corpus_root
from rcuguard.lang import (
    Block, FieldWrite, FreeStmt, IfBool, RootRead, Skip, SyncStart, SyncStop, parse, parse_stmts,
    seq,
)
from rcuguard.typesys import FREEABLE, ROOT, UNDEF, UNLINKED, TypeEnv, env_subtype, parse_env

BST = {"Left": "rcu", "Right": "rcu", "data": "normal"}


def env(text: str) -> TypeEnv:
    return parse_env(text)


def fails_with(rule: str, fn, *args, **kw):
    with pytest.raises(CheckFailure) as e:
        fn(*args, **kw)
    assert e.value.diagnostic.rule == rule, e.value.diagnostic
    return e.value.diagnostic


def test_root_read():
    out = check_atomic(TypeEnv({"head": ROOT}), RootRead("par", "head"))
    assert out == env("head: rcuRoot, par: rcuItr eps {}")


def test_bag_unlink_step():
    before = env("par: rcuItr (Next)^k {Next -> cur}, "
                 "cur: rcuItr (Next)^k.Next {Next -> curl}, "
                 "curl: rcuItr (Next)^k.Next.Next {}")
    out = check_atomic(before, FieldWrite("par", "Next", "curl"))
    assert out == env("par: rcuItr (Next)^k {Next -> curl}, cur: unlinked, "
                      "curl: rcuItr (Next)^k.Next {}")


def test_sync_turns_unlinked_into_freeable():
    out = check_stmt(env("z: unlinked, head: rcuRoot"), seq(SyncStart(), SyncStop()))
    assert out == env("z: freeable, head: rcuRoot")


def test_sync_start_must_be_followed_by_stop():
    fails_with("T-Sync", check_stmt, env("z: unlinked"), seq(SyncStart(), Skip()))


def test_free():
    assert check_atomic(TypeEnv({"x": FREEABLE}), FreeStmt("x")) == TypeEnv()
    d = fails_with("T-Free", check_atomic, TypeEnv({"x": UNLINKED}), FreeStmt("x"))
    assert "unlinked" in d.message


def test_unlink_framing_rejects_an_alias_of_the_unlinked_node():
    before = env("par: rcuItr (Next)^k {Next -> cur}, "
                 "cur: rcuItr (Next)^k.Next {Next -> curl}, "
                 "curl: rcuItr (Next)^k.Next.Next {}, "
                 "other: rcuItr eps {Next -> cur}")
    d = fails_with("T-UnlinkH", check_atomic, before, FieldWrite("par", "Next", "curl"))
    assert d.env_before == before


def test_unlink_needs_null_siblings():
    before = env("x: rcuItr eps {Right -> z}, z: rcuItr Right {Left -> r, Right -> s}, "
                 "r: rcuItr Right.Left {}, s: rcuItr Right.Right {}")
    fails_with("T-UnlinkH", check_atomic, before, FieldWrite("x", "Right", "r"), field_types=BST)
    ok = env("x: rcuItr eps {Right -> z}, z: rcuItr Right {Left -> r, Right -> null}, "
             "r: rcuItr Right.Left {}")
    out = check_atomic(ok, FieldWrite("x", "Right", "r"), field_types=BST)
    assert out["z"] == UNLINKED


def test_altfield_join():
    start = env("cur: rcuItr (Left|Right) {}, par: rcuItr eps {Left|Right -> cur}")
    body = parse_stmts(
        "if (par.Left == cur) { par = cur; cur = par.Left; } "
        "else { par = cur; cur = par.Right; }", BST, root="root")
    out = check_stmt(start, body, field_types=BST)
    assert out == env("cur: rcuItr (Left|Right).(Left|Right) {}, "
                      "par: rcuItr (Left|Right) {Left|Right -> cur}")


def test_if_bool_with_skip_branches_keeps_env():
    g = env("b: bool, head: rcuRoot")
    assert check_stmt(g, IfBool("b", Skip(), Skip())) == g


def test_add_loop_exit_refines_to_null():
    p = parse((corpus_root() / "pos/bag_add.rcu").read_text())
    report = check_program(p)
    assert report.ok
    # the site right after the loop
    texts = [s.text for s, _, _ in report.sites]
    i = next(n for n, t in enumerate(texts) if t.startswith("nw: rcuFresh {}, cur:"))
    assert "Next -> null" in str(report.sites[i][2]["cur"])


def test_read_mode_rejects_heap_writes():
    g = env("p: rcuItr, c: rcuItr")
    fails_with("ToRCURead", check_atomic, g, FieldWrite("p", "Next", "c"), "read")


def test_remove_without_sync_fails_at_free():
    src = (corpus_root() / "pos/bag_remove.rcu").read_text()
    src = src.replace("SyncStart;", "").replace("SyncStop;", "")
    src = src.replace("$assert{cur: freeable}", "").replace("$assert{cur: undef}", "")
    d = check_program(parse(src)).diagnostics[0]
    assert d.rule == "T-Free" and "unlinked" in d.message


def test_remove_without_free_fails_at_the_gate():
    src = (corpus_root() / "pos/bag_remove.rcu").read_text()
    src = src.replace("Free(cur);", "").replace("$assert{cur: undef}", "")
    d = check_program(parse(src)).diagnostics[0]
    assert d.rule == "ToRCUWrite" and "NoFreeable" in d.message


def test_check_block_on_remove():
    p = parse((corpus_root() / "pos/bag_remove.rcu").read_text())
    block = p.threads[0].body[0]
    assert isinstance(block, Block)
    out = check_block(env("head: rcuRoot, toDel: data"), block)
    assert "cur" not in out


@pytest.mark.parametrize("name", ["bag_add", "bag_remove", "bag_member", "bst_delete"])
def test_corpus_positives_check(name):
    p = parse((corpus_root() / f"pos/{name}.rcu").read_text())
    report = check_program(p)
    assert report.ok, report.diagnostics
    assert len(report.threads) == len(p.threads)


def test_annotate_diff_flags_a_widened_path():
    p = parse((corpus_root() / "pos/bag_remove.rcu").read_text())
    golden = read_golden((corpus_root() / "golden/bag_remove.golden").read_text())
    assert annotate_diff(p, golden) == []
    golden[2] = golden[2].replace("cur: rcuItr Next {}", "cur: rcuItr (Next|Other) {}")
    mism = annotate_diff(p, golden)
    assert len(mism) == 1 and mism[0].var == "cur"


def test_annotate_diff_site_count():
    p = parse((corpus_root() / "pos/bag_remove.rcu").read_text())
    with pytest.raises(SiteCountError):
        annotate_diff(p, ["head: rcuRoot"])


def test_conseq_monotonicity_on_remove_loop_body():
    # starting from a more precise environment still type-checks, and lands below
    body = parse_stmts("par = cur; cur = par.Next;", {"Next": "rcu", "data": "normal"})
    loose = env("cur: rcuItr (Next)^k.Next {}, par: rcuItr (Next)^k {Next -> cur}")
    tight = env("cur: rcuItr (Next)^k.Next {Next -> x}, par: rcuItr (Next)^k {Next -> cur}, "
                "x: rcuItr (Next)^k.Next.Next {}")
    assert env_subtype(tight, loose)
    out_loose = check_stmt(loose, body)
    out_tight = check_stmt(tight, body)
    assert env_subtype(out_tight, out_loose)


def test_diagnostic_json_shape():
    p = parse((corpus_root() / "neg/double_free.rcu").read_text())
    d = check_program(p).diagnostics[0]
    j = d.to_json()
    assert set(j) >= {"rule", "span", "message", "env_before"}
    assert j["rule"] == "T-Free"
