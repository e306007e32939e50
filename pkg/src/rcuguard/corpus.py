"""The bundled program suites and the harness that runs them.

Positive cases must type-check, match their golden environments and explore
without a single fault or axiom violation.  Negative cases must be rejected
by the checker with a specific rule; the dynamic ones must also be caught by
the explorer when the checker is bypassed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .checker import annotate_diff, check_program, read_golden
from .explorer import ExploreBounds, ExploreReport, explore, replay
from .lang import Program, parse
from .machine import HeapLayout, parse_heap


def corpus_root() -> Path:
    return Path(str(resources.files("rcuguard") / "corpus"))


@dataclass(frozen=True)
class CorpusCase:
    name: str
    source: str
    positive: bool
    heap: str
    params: dict = field(default_factory=dict, hash=False, compare=False)
    golden: str | None = None
    rule: str | None = None
    dynamic: bool = False
    expect_any: tuple[str, ...] = ()
    reconstructed: bool = False

    def path(self, root: Path | None = None) -> Path:
        return (root or corpus_root()) / self.source

    def program(self, root: Path | None = None) -> Program:
        return parse(self.path(root).read_text())

    def init_heap(self, root: Path | None = None) -> HeapLayout:
        return parse_heap(((root or corpus_root()) / self.heap).read_text())

    def golden_lines(self, root: Path | None = None) -> list[str] | None:
        if self.golden is None:
            return None
        return read_golden(((root or corpus_root()) / self.golden).read_text())


def build_corpus(root: Path | None = None) -> list[CorpusCase]:
    data = json.loads(((root or corpus_root()) / "manifest.json").read_text())
    cases = []
    for c in data["positives"]:
        cases.append(CorpusCase(c["name"], c["source"], True, c["heap"], c.get("params", {}),
                                golden=c.get("golden"), reconstructed=c.get("reconstructed", False)))
    for c in data["negatives"]:
        cases.append(CorpusCase(c["name"], c["source"], False, c["heap"], c.get("params", {}),
                                rule=c["rule"], dynamic=c["dynamic"],
                                expect_any=tuple(c.get("expect_any", ()))))
    return cases


def case(name: str) -> CorpusCase:
    for c in build_corpus():
        if c.name == name:
            return c
    raise KeyError(name)


@dataclass
class CaseResult:
    case: CorpusCase
    ok: bool
    static: str
    dynamic: str = ""
    explore: ExploreReport | None = None

    def to_json(self) -> dict:
        return {"name": self.case.name, "positive": self.case.positive, "ok": self.ok,
                "static": self.static, "dynamic": self.dynamic,
                "explore": self.explore.to_json() if self.explore else None}


def run_case(c: CorpusCase, bounds: ExploreBounds = ExploreBounds(), *, dynamic: bool = True,
             mayalias_bound: int = 3) -> CaseResult:
    p = c.program()
    report = check_program(p, bound=mayalias_bound)
    if c.positive:
        if not report.ok:
            return CaseResult(c, False, f"rejected: {report.diagnostics[0]}")
        mismatches = annotate_diff(p, c.golden_lines(), bound=mayalias_bound)
        if mismatches:
            return CaseResult(c, False, f"{len(mismatches)} golden mismatches, first: {mismatches[0]}")
        static = "accepted, golden matches"
        if not dynamic:
            return CaseResult(c, True, static)
        rep = explore(p, c.init_heap(), bounds, params=c.params)
        ok = rep.safe and rep.exhausted
        note = f"{rep.states_explored} states, " + (
            "safe" if rep.safe else "unsafe: " + ", ".join(sorted(rep.reasons())))
        if not rep.exhausted:
            note += ", bounds hit"
        return CaseResult(c, ok, static, note, rep)

    if report.ok:
        return CaseResult(c, False, "accepted but should be rejected")
    rules = [d.rule for d in report.diagnostics]
    static_ok = c.rule in rules
    static = f"rejected by {', '.join(rules)}"
    if not c.dynamic or not dynamic:
        return CaseResult(c, static_ok, static, "static only" if not c.dynamic else "")
    rep = explore(p, c.init_heap(), bounds, params=c.params)
    hits = rep.reasons() & set(c.expect_any)
    replay_ok = True
    for f in rep.violations:
        r = replay(p, c.init_heap(), f.schedule, reader_count=bounds.reader_count,
                   params=c.params)
        if r.verdict != f.verdict:
            replay_ok = False
    note = "caught: " + ", ".join(sorted(rep.reasons())) if rep.violations else "missed"
    if not replay_ok:
        note += " (replay disagrees)"
    return CaseResult(c, static_ok and bool(hits) and replay_ok, static, note, rep)


def run_all(bounds: ExploreBounds = ExploreBounds(), *, dynamic: bool = True,
            mayalias_bound: int = 3) -> list[CaseResult]:
    return [run_case(c, bounds, dynamic=dynamic, mayalias_bound=mayalias_bound)
            for c in build_corpus()]
