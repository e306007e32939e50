"""Bounded exhaustive exploration of thread interleavings.

Depth-first over scheduler choices.  Each node pairs a machine state with the
logical state that shadows it; both are checked after every step (or every
``sample``-th step).  Visited nodes are remembered under a canonical key in
which replicas of the same reader are interchangeable, so that two readers in
swapped positions count as one state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

from . import oracle
from .lang import Program
from .machine import RULE_OF, Fault, HeapLayout, Machine, MachineFault, MachineState
from .oracle import LogicalState, Verdict, Violation


@dataclass(frozen=True)
class ExploreBounds:
    max_steps: int = 40
    max_heap_nodes: int = 5
    reader_count: int = 2
    dedup: bool = True
    sample: int = 1

    def __post_init__(self):
        for name in ("max_steps", "max_heap_nodes", "reader_count", "sample"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")


@dataclass
class Finding:
    reason: str
    detail: str
    step: int
    schedule: tuple[str, ...]
    verdict: Verdict

    def to_json(self) -> dict:
        return {"reason": self.reason, "detail": self.detail, "step": self.step,
                "schedule": list(self.schedule), "verdict": self.verdict.to_json()}


@dataclass
class ExploreReport:
    states_explored: int = 0
    schedules_completed: int = 0
    violations: list[Finding] = field(default_factory=list)
    exhausted: bool = True
    max_depth: int = 0

    @property
    def safe(self) -> bool:
        return not self.violations

    def reasons(self) -> set[str]:
        return {f.reason for f in self.violations}

    def to_json(self) -> dict:
        return {"states_explored": self.states_explored,
                "schedules_completed": self.schedules_completed,
                "exhausted": self.exhausted, "max_depth": self.max_depth,
                "violations": [f.to_json() for f in self.violations]}


def live_nodes(ms: MachineState) -> int:
    return sum(1 for o in ms.heap if o not in ms.freed and o != ms.rt)


def canonical_key(ms: MachineState, ls: LogicalState) -> tuple:
    m = ms.machine
    per_thread = []
    for i, th in enumerate(m.threads):
        tid = th.tid
        iters = tuple(sorted(o for o, s in ls.O.items() if oracle.IteratorObs(tid) in s))
        per_thread.append((
            tuple(sorted(ms.stacks[i].items(), key=lambda kv: kv[0])),
            ms.pcs[i], ms.phases[i], tid in ms.R, tid in ms.B, tid in ls.T,
            iters,
            tuple(sorted(x for x, t in ls.U if t == tid)),
            tuple(sorted(o for o, t in ls.F.items() if tid in t)),
            ms.lock == tid,
        ))
    for group in m.groups:
        ordered = sorted((per_thread[i] for i in group), key=repr)
        for i, sig in zip(group, ordered):
            per_thread[i] = sig
    shared_obs = tuple(sorted(
        (o, tuple(sorted(ob.kind for ob in s if ob.kind != oracle.ITERATOR)))
        for o, s in ls.O.items()))
    return (tuple(sorted(ms.heap.items())), ms.freed, ms.rt, ms.next_loc, ms.lock is None,
            shared_obs, tuple(sorted(ls.F)), tuple(per_thread))


class _Run:
    def __init__(self, machine: Machine, bounds: ExploreBounds):
        self.m = machine
        self.bounds = bounds
        self.report = ExploreReport()
        self.found: dict[str, Finding] = {}

    def record(self, reason: str, detail: str, step: int, schedule: tuple[str, ...],
               reasons: Iterable[str]) -> None:
        if reason in self.found:
            return
        f = Finding(reason, detail, step, schedule, oracle.safety_verdict([], list(reasons)))
        self.found[reason] = f
        self.report.violations.append(f)


def _check_state(ls, ms, step, sample, force=False) -> list[Violation]:
    if force or step % sample == 0:
        return oracle.check_axioms(ls, ms)
    return []


def explore(p: Program, init_heap: HeapLayout, bounds: ExploreBounds = ExploreBounds(), *,
            params: dict[str, dict[str, int]] | None = None) -> ExploreReport:
    m = Machine(p, reader_count=bounds.reader_count, params=params)
    ms0 = m.init(init_heap)
    ls0 = oracle.initial(ms0)
    run = _Run(m, bounds)
    rep = run.report
    if live_nodes(ms0) > bounds.max_heap_nodes:
        rep.exhausted = False
        return rep

    initial_found = oracle.check_axioms(ls0, ms0)
    for v in initial_found:
        run.record(v.axiom, str(v), 0, (), [x.axiom for x in initial_found])

    visited: dict[tuple, int] = {}
    # stack items: (machine state, logical state, schedule, reasons so far)
    stack: list[tuple[MachineState, LogicalState, tuple[str, ...], frozenset[str]]] = [
        (ms0, ls0, (), frozenset(v.axiom for v in initial_found))]
    while stack:
        ms, ls, sched, reasons = stack.pop()
        depth = len(sched)
        if bounds.dedup:
            key = canonical_key(ms, ls)
            prev = visited.get(key)
            if prev is not None and prev <= depth:
                continue
            visited[key] = depth
        rep.states_explored += 1
        rep.max_depth = max(rep.max_depth, depth)
        tids = m.enabled_tids(ms)
        if not tids:
            if ms.all_done():
                rep.schedules_completed += 1
            else:
                run.record("Deadlock", "no thread can move", depth, sched, reasons | {"Deadlock"})
            continue
        if depth >= bounds.max_steps:
            rep.exhausted = False
            continue
        for tid in reversed(tids):
            ins = m.pending(ms, tid)
            nsched = sched + (tid,)
            try:
                nms = m.step(ms, tid)
            except MachineFault as e:
                fault = e.fault
                run.record(fault.kind, str(fault), depth + 1, nsched, reasons | {fault.kind})
                continue
            nls = oracle.advance(ls, ms, (tid, ins), nms)
            found = oracle.check_transition(ls, ms, (tid, ins), nls, nms)
            found += _check_state(nls, nms, depth + 1, bounds.sample,
                                  force=nms.all_done())
            nreasons = reasons | {v.axiom for v in found}
            for v in found:
                run.record(v.axiom, str(v), depth + 1, nsched, nreasons)
            if live_nodes(nms) > bounds.max_heap_nodes:
                rep.exhausted = False
                continue
            stack.append((nms, nls, nsched, nreasons))
    return rep


@dataclass
class TraceLine:
    step: int
    tid: str
    rule: str
    instr: str
    digest: str

    def __str__(self) -> str:
        return f"<{self.step}, {self.tid}, {self.rule}, {self.digest}>"


@dataclass
class ReplayResult:
    trace: list[TraceLine]
    verdict: Verdict
    faults: list[Fault]
    violations: list[Violation]
    final: MachineState | None
    logical: LogicalState | None
    divergence: str | None = None

    def to_json(self) -> dict:
        return {
            "trace": [{"step": t.step, "tid": t.tid, "rule": t.rule, "instr": t.instr,
                       "hash": t.digest} for t in self.trace],
            "verdict": self.verdict.to_json(),
            "faults": [str(f) for f in self.faults],
            "violations": [v.to_json() for v in self.violations],
            "divergence": self.divergence,
            "final": self.final.to_json() if self.final is not None else None,
        }


class ScheduleDivergence(ValueError):
    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


def replay(p: Program, init_heap: HeapLayout, schedule: Iterable[str], *,
           reader_count: int | None = 2, params: dict[str, dict[str, int]] | None = None,
           strict: bool = True) -> ReplayResult:
    """Re-run one schedule.  A disabled or unknown thread raises ScheduleDivergence
    when ``strict``; otherwise the result carries the divergence message."""
    m = Machine(p, reader_count=reader_count, params=params)
    ms = m.init(init_heap)
    ls = oracle.initial(ms)
    trace: list[TraceLine] = []
    faults: list[Fault] = []
    violations = [v.at(0, ()) for v in oracle.check_axioms(ls, ms)]
    sched: list[str] = []
    divergence = None
    for n, tid in enumerate(schedule, 1):
        problem = None
        if tid not in m.index:
            problem = f"unknown thread {tid!r}"
        elif not m.enabled(ms, tid):
            problem = f"thread {tid} is not enabled"
        if problem:
            if strict:
                raise ScheduleDivergence(n, problem)
            divergence = f"step {n}: {problem}"
            break
        sched.append(tid)
        ins = m.pending(ms, tid)
        try:
            nms = m.step(ms, tid)
        except MachineFault as e:
            faults.append(e.fault)
            trace.append(TraceLine(n, tid, "Fault", str(ins), ms.digest()))
            break
        nls = oracle.advance(ls, ms, (tid, ins), nms)
        found = oracle.check_transition(ls, ms, (tid, ins), nls, nms)
        found += oracle.check_axioms(nls, nms)
        violations.extend(v.at(n, sched) for v in found)
        ms, ls = nms, nls
        trace.append(TraceLine(n, tid, _rule(ins.op), str(ins), ms.digest()))
    return ReplayResult(trace, oracle.safety_verdict(faults, violations), faults, violations,
                        ms, ls, divergence)


def sequential_schedule(p: Program, init_heap: HeapLayout, *, reader_count: int | None = 2,
                        params: dict[str, dict[str, int]] | None = None,
                        limit: int = 10_000) -> list[str]:
    """Run each thread as far as it can go, in declaration order, until nothing moves."""
    m = Machine(p, reader_count=reader_count, params=params)
    ms = m.init(init_heap)
    out: list[str] = []
    while len(out) < limit:
        tids = m.enabled_tids(ms)
        if not tids:
            break
        tid = tids[0]
        out.append(tid)
        try:
            ms = m.step(ms, tid)
        except MachineFault:
            break
    return out


def _rule(op: str) -> str:
    return RULE_OF.get(op, op)


def run_schedule_verdict(p: Program, init_heap: HeapLayout, schedule, **kw) -> Verdict:
    return replay(p, init_heap, schedule, **kw).verdict


__all__ = ["ExploreBounds", "ExploreReport", "Finding", "explore", "replay", "ReplayResult",
           "ScheduleDivergence", "sequential_schedule", "TraceLine", "canonical_key", "live_nodes"]
