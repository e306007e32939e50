import itertools

from hypothesis import given, settings

from rcuguard.corpus import corpus_root
from rcuguard.checker import check_program
from rcuguard.lang import parse
from rcuguard.paths import FieldMap, parse_path
from rcuguard.typesys import (
    BARE, BOOL, DATA, FREEABLE, GATES, ROOT, UNDEF, UNLINKED, AnnotationError, RcuFresh, RcuItr,
    TypeEnv, env_gate, env_reindex, env_subtype, join_env, parse_env, parse_type, type_subtype,
)
from strategies import types

import pytest


def itr(path: str, fmap: dict | None = None) -> RcuItr:
    return RcuItr(parse_path(path), FieldMap.of(fmap or {}))


def test_type_subtype_examples():
    assert type_subtype(UNLINKED, UNLINKED)
    assert type_subtype(itr("Next", {"Next": "z"}), UNDEF)
    assert not type_subtype(UNDEF, itr("eps"))
    assert type_subtype(BARE, BARE)
    assert type_subtype(BARE, UNDEF)


def test_distinct_non_iterator_constructors_never_relate():
    table = [UNLINKED, FREEABLE, ROOT, BOOL, DATA, RcuFresh(), UNDEF]
    for a, b in itertools.product(table, table):
        if a != b:
            assert not type_subtype(a, b), (a, b)


@settings(max_examples=1000, deadline=None)
@given(types)
def test_type_subtype_reflexive(t):
    assert type_subtype(t, t)


@settings(max_examples=1000, deadline=None)
@given(types, types, types)
def test_type_subtype_transitive(a, b, c):
    if type_subtype(a, b) and type_subtype(b, c):
        assert type_subtype(a, c)


def test_env_subtype_examples():
    g = parse_env("cur: rcuItr Left {}, par: rcuItr eps {Left -> cur}")
    wide = parse_env("cur: rcuItr (Left|Right) {}, par: rcuItr eps {Left|Right -> cur}")
    assert env_subtype(g, g)
    assert env_subtype(g, wide)
    assert not env_subtype(wide, g)
    assert not env_subtype(TypeEnv({"x": UNLINKED}), TypeEnv({"x": UNDEF}))
    assert env_subtype(TypeEnv({"x": itr("Next")}), TypeEnv())


def test_join_env_blocks_on_linear_mismatch():
    env, var = join_env(TypeEnv({"x": UNLINKED}), TypeEnv({"x": FREEABLE}))
    assert env is None and var == "x"
    env, var = join_env(TypeEnv({"x": itr("l")}), TypeEnv({"x": itr("r")}))
    assert env["x"] == itr("(l|r)")


def test_reindex_bag_environment():
    inner = parse_env("cur: rcuItr (Next)^k.Next.Next {}, par: rcuItr (Next)^k.Next {Next -> cur}")
    head = parse_env("cur: rcuItr (Next)^k.Next {}, par: rcuItr (Next)^k {Next -> cur}")
    assert env_reindex(inner, "k", "Next") == head
    assert env_reindex(head, "m", "Next") == head


def test_reindex_inner_bst_environment():
    g = parse_env("lp: rcuItr (Left|Right)^k.(Left|Right).Right.(Left)^m.Left {Left -> leftmost}")
    out = env_reindex(g, "m", "Left")
    assert out["lp"] == itr("(Left|Right)^k.(Left|Right).Right.(Left)^m", {"Left": "leftmost"})


def test_gates():
    assert env_gate(TypeEnv({"x": UNDEF}), "NoUnlinked")
    assert not env_gate(TypeEnv({"z": UNLINKED}), "NoUnlinked")
    assert not env_gate(TypeEnv({"z": RcuFresh()}), "NoFresh")
    assert not env_gate(TypeEnv({"z": FREEABLE}), "NoFreeable")


def test_remove_final_environment_passes_every_gate():
    p = parse((corpus_root() / "pos/bag_remove.rcu").read_text())
    report = check_program(p)
    final = report.threads[0].final_env
    assert final["cur"] == UNDEF
    assert all(env_gate(final, g) for g in GATES)


def _corpus_envs():
    envs = []
    for name in ["bag_add", "bag_remove", "bag_member", "bst_delete"]:
        p = parse((corpus_root() / f"pos/{name}.rcu").read_text())
        envs += [e for _, _, e in check_program(p).sites if e is not None]
    return envs


def test_reindex_commutes_with_gates_on_corpus_envs():
    envs = _corpus_envs()
    assert len(envs) > 50
    for g in envs:
        for k, f in [("k", "Next"), ("k", "Left|Right"), ("m", "Left")]:
            r = env_reindex(g, k, f)
            for gate in GATES:
                assert env_gate(r, gate) == env_gate(g, gate)


def test_env_subtype_reflexive_and_antisymmetric_on_corpus_envs():
    envs = _corpus_envs()
    for g in envs:
        assert env_subtype(g, g)
    for a, b in itertools.combinations(envs[:40], 2):
        if env_subtype(a, b) and env_subtype(b, a):
            assert a == b


def test_annotation_parsing():
    assert parse_type("rcuItr") == BARE
    assert parse_type("rcuFresh {Next -> null}") == RcuFresh(FieldMap.of({"Next": None}))
    assert parse_type("rcuItr (Next)^k {Next -> cur}") == itr("(Next)^k", {"Next": "cur"})
    assert "cur" not in parse_env("cur: undef")
    with pytest.raises(AnnotationError):
        parse_type("rcuWidget")
    with pytest.raises(AnnotationError):
        parse_env("x: bool, x: data")
