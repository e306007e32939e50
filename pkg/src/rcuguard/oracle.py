"""Logical state that rides along the machine, and the memory axioms checked on it.

The logical state records, per location, how threads may currently view it
(``O``), which stack slots are logically dead (``U``), which threads have
taken part (``T``) and which unlinked locations are waiting on which readers
(``F``).  :func:`advance` updates it after each machine step using only the
pre and post machine states; it never consults the type checker, so the
monitor is an independent judge of a run.

Locations never mentioned in ``O`` are ordinary linked nodes that nobody has
an iterator on yet.  A freed location is removed from ``O`` altogether.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

from .machine import Fault, Instr, Loc, Machine, MachineState

FRESH = "fresh"
UNLINKED = "unlinked"
FREEABLE = "freeable"
ROOT = "root"
ITERATOR = "iterator"


@dataclass(frozen=True, order=True)
class Obs:
    kind: str
    tid: str = ""

    def __str__(self) -> str:
        return f"iterator {self.tid}" if self.kind == ITERATOR else self.kind


FreshObs = Obs(FRESH)
UnlinkedObs = Obs(UNLINKED)
FreeableObs = Obs(FREEABLE)
RootObs = Obs(ROOT)


def IteratorObs(tid: str) -> Obs:
    return Obs(ITERATOR, tid)


WRITER_ONLY = frozenset({FreshObs, UnlinkedObs, FreeableObs})

AXIOMS = ("OW", "RWOW", "AWRT", "IFL", "ULKR", "FLR", "WULK", "FR", "WF", "FNR", "FPI",
          "WNR", "RITR", "RINFL", "HD", "UNQRT", "UNQR")
TRANSITION_CHECKS = ("LIFECYCLE", "RECLAIM")


@dataclass(frozen=True)
class LogicalState:
    O: dict[int, frozenset[Obs]]
    U: frozenset[tuple[str, str]]
    T: frozenset[str]
    F: dict[int, frozenset[str]]

    def obs(self, o: int) -> frozenset[Obs]:
        return self.O.get(o, frozenset())

    def key(self) -> tuple:
        return (tuple(sorted((o, tuple(sorted(s))) for o, s in self.O.items())),
                self.U, self.T,
                tuple(sorted((o, tuple(sorted(t))) for o, t in self.F.items())))

    def to_json(self) -> dict:
        return {
            "O": {str(o): sorted(map(str, s)) for o, s in sorted(self.O.items())},
            "U": sorted(f"{x}@{t}" for x, t in self.U),
            "T": sorted(self.T),
            "F": {str(o): sorted(t) for o, t in sorted(self.F.items())},
        }


@dataclass(frozen=True)
class Violation:
    axiom: str
    witnesses: tuple[str, ...]
    step: int = -1
    schedule: tuple[str, ...] = ()

    def at(self, step: int, schedule: Iterable[str]) -> "Violation":
        return Violation(self.axiom, self.witnesses, step, tuple(schedule))

    def to_json(self) -> dict:
        return {"axiom": self.axiom, "step": self.step, "witnesses": list(self.witnesses),
                "schedule": list(self.schedule)}

    def __str__(self) -> str:
        return f"{self.axiom}[{', '.join(self.witnesses)}]"


def initial(ms: MachineState) -> LogicalState:
    return LogicalState({ms.rt: frozenset({RootObs})}, frozenset(), frozenset(), {})


# -- transfer -----------------------------------------------------------------


def _assigned(ins: Instr) -> str | None:
    if ins.op in ("root_read", "var_read", "field_read", "data_read", "data_test", "alloc"):
        return ins.args[0]
    return None


def _loc_vars(ms: MachineState, tid: str) -> list[tuple[str, int]]:
    stack = ms.stacks[ms.machine.index[tid]]
    return [(x, v.id) for x, v in stack.items() if isinstance(v, Loc)]


def advance(ls: LogicalState, pre: MachineState, action: tuple[str, Instr],
            post: MachineState) -> LogicalState:
    tid, ins = action
    m = pre.machine
    O = dict(ls.O)
    U = set(ls.U)
    T = ls.T
    F = dict(ls.F)
    is_reader = m.threads[m.index[tid]].kind == "reader"

    def drop_iter(who: str) -> None:
        it = IteratorObs(who)
        for o, s in list(O.items()):
            if it in s:
                O[o] = s - {it}

    x = _assigned(ins)
    if x is not None:
        U.discard((x, tid))

    match ins.op:
        case "root_read" | "var_read" | "field_read":
            v = post.var(tid, x)
            if ins.op == "var_read" and (ins.args[1], tid) in ls.U:
                U.add((x, tid))
            elif isinstance(v, Loc) and v.id not in post.freed:
                s = O.get(v.id, frozenset())
                if is_reader or not (s & WRITER_ONLY):
                    if FreshObs not in s:
                        O[v.id] = s | {IteratorObs(tid)}
        case "alloc":
            O[post.var(tid, x).id] = frozenset({FreshObs})
        case "field_write":
            before = m.reachable(pre)
            after = m.reachable(post)
            for o in before - after:
                s = O.get(o, frozenset()) - {IteratorObs(tid)}
                O[o] = s | {UnlinkedObs}
            for o in after - before:
                s = O.get(o, frozenset())
                if FreshObs in s:
                    O[o] = (s - {FreshObs}) | {IteratorObs(tid)}
        case "sync_start":
            for o, s in O.items():
                if UnlinkedObs in s and o not in F:
                    F[o] = pre.R
        case "sync_stop":
            for o in F:
                s = O.get(o, frozenset())
                if UnlinkedObs in s:
                    O[o] = (s - {UnlinkedObs}) | {FreeableObs}
        case "free":
            o = pre.var(tid, ins.args[0]).id
            O.pop(o, None)
            F.pop(o, None)
            for y, loc in _loc_vars(post, tid):
                if loc == o:
                    U.add((y, tid))
        case "begin_read" | "begin_write":
            T = T | {tid}
        case "end_read" | "end_write":
            drop_iter(tid)
            for y, _ in _loc_vars(post, tid):
                U.add((y, tid))
            if ins.op == "end_read":
                F = {o: t - {tid} for o, t in F.items()}
    return LogicalState({o: s for o, s in O.items() if s or o in post.heap and o not in post.freed},
                        frozenset(U), T, F)


# -- axioms -------------------------------------------------------------------


def lifecycle_class(ls: LogicalState, ms: MachineState, o: int) -> int:
    """0 fresh, 1 linked/iterator, 2 unlinked, 3 freeable, 4 freed."""
    if o in ms.freed:
        return 4
    s = ls.obs(o)
    if FreeableObs in s:
        return 3
    if UnlinkedObs in s:
        return 2
    if FreshObs in s:
        return 0
    return 1


LIFECYCLE_NAMES = ("fresh", "iterator", "unlinked", "freeable", "undef")


def check_axioms(ls: LogicalState, ms: MachineState) -> list[Violation]:
    m: Machine = ms.machine
    out: list[Violation] = []

    def bad(axiom: str, *w) -> None:
        out.append(Violation(axiom, tuple(str(x) for x in w)))

    live = [o for o in ms.heap if o not in ms.freed]
    obs = ls.obs
    edges: list[tuple[int, str, int]] = []
    for o in live:
        vals = ms.heap[o]
        for f, s in zip(m.rcu, m.rcu_slots):
            v = vals[s]
            if isinstance(v, Loc):
                edges.append((o, f, v.id))

    # OW: a target with two owners needs one of them to be off the structure
    owners: dict[int, list[tuple[int, str]]] = {}
    for o, f, t in edges:
        owners.setdefault(t, []).append((o, f))
    for t, srcs in owners.items():
        plain = [(o, f) for o, f in srcs if not (obs(o) & WRITER_ONLY)]
        if len(plain) > 1:
            bad("OW", t, *(f"{o}.{f}" for o, f in plain))

    # HD: no dangling edges out of live objects
    for o, f, t in edges:
        if t not in ms.heap or t in ms.freed:
            bad("HD", f"{o}.{f}", t)

    # UNQRT and UNQR: the root has no parent and the reachable part is a tree
    for o, f, t in edges:
        if t == ms.rt:
            bad("UNQRT", f"{o}.{f}")
    seen = {ms.rt}
    work = [ms.rt]
    while work:
        o = work.pop()
        if o in ms.freed:
            continue
        vals = ms.heap[o]
        for s in m.rcu_slots:
            v = vals[s]
            if isinstance(v, Loc):
                if v.id in seen:
                    bad("UNQR", v.id)
                    continue
                seen.add(v.id)
                work.append(v.id)
    reach = seen

    roots = [o for o, s in ls.O.items() if RootObs in s]
    if roots != [ms.rt]:
        bad("UNQRT", "root observations", *roots)

    # ULKR and FLR
    for o, f, t in edges:
        st = obs(t)
        if UnlinkedObs in st and not (obs(o) & {UnlinkedObs, FreeableObs}):
            bad("ULKR", f"{o}.{f}", t)
        if t in ls.F:
            if o not in ls.F or not ls.F[o] <= ls.F[t]:
                bad("FLR", f"{o}.{f}", t)

    # IFL, RINFL, WULK, FNR, FPI
    for o, s in ls.O.items():
        iters = {ob.tid for ob in s if ob.kind == ITERATOR}
        if o in ls.F:
            for t in sorted(iters - ls.F[o]):
                bad("IFL", o, t)
        if ms.lock is not None and ms.lock in iters and UnlinkedObs in s:
            bad("WULK", o, ms.lock)
        if FreshObs in s:
            if iters or UnlinkedObs in s:
                bad("FNR", o)
            if o in ms.heap and o not in ms.freed:
                vals = ms.heap[o]
                for f, slot in zip(m.rcu, m.rcu_slots):
                    v = vals[slot]
                    if isinstance(v, Loc):
                        ts = obs(v.id)
                        if v.id in ms.freed or v.id not in reach or ts & WRITER_ONLY:
                            bad("FPI", f"{o}.{f}", v.id)
    for o, t in ls.F.items():
        if not t <= ms.B:
            bad("RINFL", o, *sorted(t - ms.B))
        if not (obs(o) & {UnlinkedObs, FreeableObs}):
            bad("FLR", o, "not off the structure")

    if ms.lock is not None and ms.lock in ms.R:
        bad("WNR", ms.lock)

    # stack-based axioms
    fresh_holders: dict[int, set[str]] = {}
    for i, th in enumerate(m.threads):
        tid = th.tid
        for x, v in ms.stacks[i].items():
            if not isinstance(v, Loc):
                continue
            o = v.id
            s = obs(o)
            dead = (x, tid) in ls.U
            if FreshObs in s:
                fresh_holders.setdefault(o, set()).add(tid)
                if ms.lock != tid:
                    bad("WF", f"{x}@{tid}", o)
            if dead:
                continue
            it = IteratorObs(tid)
            if not (it in s or (ms.lock == tid and s & WRITER_ONLY)):
                bad("RWOW", f"{x}@{tid}", o)
            if o == ms.rt and it not in s:
                bad("AWRT", f"{x}@{tid}")
            if tid in ms.R and (it not in s or FreshObs in s):
                bad("RITR", f"{x}@{tid}", o)
    for o, holders in fresh_holders.items():
        parents = owners.get(o, [])
        if parents or len(holders) > 1:
            bad("FR", o, *sorted(holders), *(f"{p}.{f}" for p, f in parents))
    return out


def check_transition(ls_pre: LogicalState, pre: MachineState, action: tuple[str, Instr],
                     ls_post: LogicalState, post: MachineState) -> list[Violation]:
    """Checks that relate two consecutive states rather than one."""
    tid, ins = action
    out: list[Violation] = []
    for o in pre.heap:
        a = lifecycle_class(ls_pre, pre, o)
        b = lifecycle_class(ls_post, post, o)
        if b < a:
            out.append(Violation("LIFECYCLE", (str(o), LIFECYCLE_NAMES[a], LIFECYCLE_NAMES[b])))
    if ins.op == "free":
        v = pre.var(tid, ins.args[0])
        if isinstance(v, Loc) and v.id not in pre.freed:
            o = v.id
            if FreeableObs not in ls_pre.obs(o) or ls_pre.F.get(o):
                out.append(Violation("RECLAIM", (str(o), "freed before a grace period")))
    if ins.op == "end_write":
        for o, s in ls_post.O.items():
            if s & {UnlinkedObs, FreeableObs} and o not in post.freed:
                out.append(Violation("RECLAIM", (str(o), "left unreclaimed at write end")))
    return out


# -- verdicts -----------------------------------------------------------------


@dataclass(frozen=True)
class Verdict:
    safe: bool
    reasons: tuple[str, ...] = field(default=())

    def __str__(self) -> str:
        return "safe" if self.safe else "unsafe(" + ", ".join(self.reasons) + ")"

    def to_json(self) -> dict:
        return {"safe": self.safe, "reasons": list(self.reasons)}


def reason_of(item: Fault | Violation | str) -> str:
    if isinstance(item, Fault):
        return item.kind
    if isinstance(item, Violation):
        return item.axiom
    return str(item)


def safety_verdict(faults: Iterable[Fault | str], violations: Iterable[Violation | str]) -> Verdict:
    reasons = sorted({reason_of(f) for f in faults} | {reason_of(v) for v in violations})
    return Verdict(not reasons, tuple(reasons))
