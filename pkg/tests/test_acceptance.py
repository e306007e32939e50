"""Acceptance suite: one PASS/FAIL line per criterion, printed in the terminal summary.

Run alone with ``pytest tests/test_acceptance.py -v``.
"""

import itertools
import time

import pytest
from hypothesis import HealthCheck, given, settings

from rcuguard import oracle
from rcuguard.checker import annotate_diff, check_program
from rcuguard.corpus import build_corpus, case
from rcuguard.explorer import ExploreBounds, canonical_key, explore, replay
from rcuguard.machine import Machine, MachineFault
from rcuguard.paths import concretize, fieldmap_subtype, may_alias, path_subtype
from rcuguard.typesys import env_gate, env_reindex, type_subtype
from strategies import fieldmaps, paths, types

RESULTS: list[str] = []
BOUNDS = ExploreBounds(max_steps=40, max_heap_nodes=5, reader_count=2, dedup=True)
MAYALIAS_K = 3
GATES = ("NoUnlinked", "NoFresh", "NoFreeable")


def report(n: int, title: str, ok: bool, detail: str) -> None:
    RESULTS.append(f"{'PASS' if ok else 'FAIL'} [{n}] {title}: {detail}")


def timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


# 1 ---------------------------------------------------------------------------

def test_criterion_1_bag_golden_annotations():
    def run():
        total = []
        for name in ("bag_add", "bag_remove", "bag_member"):
            c = case(name)
            total.append((name, len(c.golden_lines()), annotate_diff(c.program(), c.golden_lines())))
        return total
    results, secs = timed(run)
    mismatches = sum(len(m) for _, _, m in results)
    sites = sum(n for _, n, _ in results)
    ok = mismatches == 0 and secs < 1.0
    report(1, "bag golden annotations", ok,
           f"{sites} sites, {mismatches} mismatches, {secs:.3f}s (limit 1s)")
    assert ok


# 2 ---------------------------------------------------------------------------

def test_criterion_2_bst_delete():
    def run():
        c = case("bst_delete_two_children")
        p = c.program()
        rep = check_program(p)
        return p, rep, annotate_diff(p, c.golden_lines())
    (p, rep, mm), secs = timed(run)
    by_line = {span.line: rule for _, span, rule in rep.applied}
    text = case("bst_delete_two_children").path().read_text().splitlines()
    unlink_succ = next(i for i, l in enumerate(text, 1) if l.strip() == "lp.Left = leftmostR;")
    publishes = [i for i, l in enumerate(text, 1)
                 if l.strip() in ("parent.Left = currentF;", "parent.Right = currentF;")]
    ok = (rep.ok and not mm and by_line.get(unlink_succ) == "T-UnlinkH"
          and all(by_line.get(i) == "T-Replace" for i in publishes) and len(publishes) == 4
          and secs < 1.0)
    report(2, "BST delete", ok,
           f"accepted={rep.ok}, {len(mm)} golden mismatches, successor unlink by "
           f"{by_line.get(unlink_succ)}, {len(publishes)} publications by "
           f"{sorted({by_line.get(i) for i in publishes})}, {secs:.3f}s (limit 1s)")
    assert ok


# 3 ---------------------------------------------------------------------------

def test_criterion_3_negative_suite():
    negs = [c for c in build_corpus() if not c.positive]

    def run():
        out = []
        for c in negs:
            rep = check_program(c.program())
            out.append((c, rep.ok, [d.rule for d in rep.diagnostics]))
        return out
    results, secs = timed(run)
    wrong = [c.name for c, accepted, rules in results if accepted or c.rule not in rules]
    ok = len(negs) == 9 and not wrong and secs < 1.0
    report(3, "negative suite", ok,
           f"{len(negs) - len(wrong)}/{len(negs)} rejected with the expected rule, "
           f"{secs:.3f}s (limit 1s)" + (f", wrong: {wrong}" if wrong else ""))
    assert ok


# 4 ---------------------------------------------------------------------------

POSITIVES = [c.name for c in build_corpus() if c.positive]


@pytest.mark.parametrize("name", POSITIVES)
def test_criterion_4_positive_exploration(name):
    c = case(name)
    rep, secs = timed(lambda: explore(c.program(), c.init_heap(), BOUNDS, params=c.params))
    ok = rep.safe and rep.exhausted and secs <= 60
    report(4, f"explore {name}", ok,
           f"{rep.states_explored} states, {len(rep.violations)} findings, "
           f"exhausted={rep.exhausted}, {secs:.2f}s (limit 60s)")
    assert ok


# 5 ---------------------------------------------------------------------------

DYNAMIC = [c.name for c in build_corpus() if not c.positive and c.dynamic]


@pytest.mark.parametrize("name", DYNAMIC)
def test_criterion_5_negative_exploration(name):
    c = case(name)

    def run():
        rep = explore(c.program(), c.init_heap(), BOUNDS, params=c.params)
        same = all(replay(c.program(), c.init_heap(), f.schedule,
                          reader_count=BOUNDS.reader_count, params=c.params).verdict == f.verdict
                   for f in rep.violations)
        return rep, same
    (rep, same), secs = timed(run)
    ok = bool(rep.violations) and same and secs <= 60
    report(5, f"find bug in {name}", ok,
           f"{len(rep.violations)} schedules ({', '.join(sorted(rep.reasons()))}), "
           f"replay agrees={same}, {secs:.2f}s (limit 60s)")
    assert ok


# 6 ---------------------------------------------------------------------------

def _brute_alias(a, b, top):
    names = sorted(a.indices() | b.indices())
    for values in itertools.product(range(top + 1), repeat=len(names)):
        env = dict(zip(names, values))
        if concretize(a, env, 64).seqs & concretize(b, env, 64).seqs:
            return True
    return False


def test_criterion_6_may_alias_is_sound():
    seen = {"n": 0, "neg": 0, "bad": []}

    @settings(max_examples=1000, deadline=None, database=None,
              suppress_health_check=list(HealthCheck))
    @given(paths, paths)
    def prop(a, b):
        seen["n"] += 1
        if not may_alias(a, b, MAYALIAS_K):
            seen["neg"] += 1
            if _brute_alias(a, b, MAYALIAS_K + 2):
                seen["bad"].append((str(a), str(b)))

    prop()
    ok = seen["n"] >= 1000 and not seen["bad"]
    report(6, "may_alias against brute force", ok,
           f"{seen['n']} pairs, {seen['neg']} judged disjoint, "
           f"{len(seen['bad'])} counterexamples (indexes 0..{MAYALIAS_K + 2})")
    assert ok, seen["bad"][:3]


# 7 ---------------------------------------------------------------------------

def _corpus_envs():
    envs = []
    for name in ("bag_add", "bag_remove", "bag_member", "bst_delete_leafish"):
        envs += [e for _, _, e in check_program(case(name).program()).sites if e is not None]
    return envs


def test_criterion_7_subtyping_laws():
    counts = {"n": 0, "bad": []}
    law = settings(max_examples=1000, deadline=None, database=None,
                   suppress_health_check=list(HealthCheck))

    def transitive(rel, a, b, c, label):
        counts["n"] += 1
        if not rel(a, a):
            counts["bad"].append((label, "reflexivity", str(a)))
        if rel(a, b) and rel(b, c) and not rel(a, c):
            counts["bad"].append((label, "transitivity", str(a), str(b), str(c)))

    @law
    @given(paths, paths, paths)
    def on_paths(a, b, c):
        transitive(path_subtype, a, b, c, "path")

    @law
    @given(fieldmaps(), fieldmaps(), fieldmaps())
    def on_maps(a, b, c):
        transitive(fieldmap_subtype, a, b, c, "fieldmap")

    @law
    @given(types, types, types)
    def on_types(a, b, c):
        transitive(type_subtype, a, b, c, "type")

    on_paths()
    on_maps()
    on_types()

    envs = _corpus_envs()
    commute = 0
    for g in envs:
        for k, f in (("k", "Next"), ("k", "Left|Right"), ("m", "Left")):
            r = env_reindex(g, k, f)
            for gate in GATES:
                commute += 1
                if env_gate(r, gate) != env_gate(g, gate):
                    counts["bad"].append(("reindex", gate, str(g)))
            if {x: type(t) for x, t in r.items()} != {x: type(t) for x, t in g.items()}:
                counts["bad"].append(("reindex", "constructor", str(g)))
    ok = counts["n"] >= 3000 and not counts["bad"]
    report(7, "subtyping laws", ok,
           f"{counts['n']} generated triples, {commute} reindex/gate checks over "
           f"{len(envs)} corpus envs, {len(counts['bad'])} failures")
    assert ok, counts["bad"][:3]


# 8 ---------------------------------------------------------------------------

ORDER = ("fresh", "iterator", "unlinked", "freeable", "undef")


def _lifecycle_walk(c):
    """Depth-first over every interleaving, carrying each location's class history.

    Histories are collapsed runs of lifecycle classes; a trace passes when every
    history is a subsequence of ORDER.  States are merged only when the machine
    state, logical state and every history coincide, so no trace is skipped.
    """
    m = Machine(c.program(), reader_count=BOUNDS.reader_count, params=c.params)
    ms0 = m.init(c.init_heap())
    ls0 = oracle.initial(ms0)

    def cls(ls, ms, o):
        return ORDER[oracle.lifecycle_class(ls, ms, o)]

    h0 = tuple((o, (cls(ls0, ms0, o),)) for o in sorted(ms0.heap))
    stack = [(ms0, ls0, h0, 0)]
    seen = set()
    steps = bad = 0
    while stack:
        ms, ls, hist, depth = stack.pop()
        key = (canonical_key(ms, ls), hist)
        if key in seen:
            continue
        seen.add(key)
        tids = m.enabled_tids(ms)
        if not tids or depth >= BOUNDS.max_steps:
            continue
        for tid in tids:
            ins = m.pending(ms, tid)
            try:
                nms = m.step(ms, tid)
            except MachineFault:
                bad += 1
                continue
            nls = oracle.advance(ls, ms, (tid, ins), nms)
            steps += 1
            hd = dict(hist)
            for o in nms.heap:
                now = cls(nls, nms, o)
                h = hd.get(o, ())
                if not h or h[-1] != now:
                    hd[o] = h + (now,)
            nh = tuple(sorted(hd.items()))
            for _, h in nh:
                if not _is_subsequence(h, ORDER):
                    bad += 1
                    break
            stack.append((nms, nls, nh, depth + 1))
    return len(seen), steps, bad


def _is_subsequence(h, order):
    it = iter(order)
    return all(x in it for x in h)


def test_criterion_8_observation_lifecycle():
    rows = []
    for name in POSITIVES:
        (states, steps, bad), secs = timed(lambda: _lifecycle_walk(case(name)))
        rows.append((name, states, steps, bad))
    ok = all(bad == 0 for *_, bad in rows)
    report(8, "observation lifecycle", ok,
           f"{sum(r[1] for r in rows)} history-carrying states and {sum(r[2] for r in rows)} "
           f"steps over {len(rows)} cases, {sum(r[3] for r in rows)} out-of-order histories")
    assert ok
