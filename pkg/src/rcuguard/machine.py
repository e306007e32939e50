"""Small-step abstract machine for RCU programs.

Every thread's statements are compiled to a flat list of instructions.  One
call to :meth:`Machine.step` performs exactly one instruction for one thread;
unconditional jumps are followed for free so that a step always corresponds
to one atomic action (a heap access, a stack update, a branch test or an RCU
primitive).

The state mirrors the usual RCU presentation: per-thread stacks, a heap of
objects, the writer lock, the root location, the set of active readers and
the bounding set a grace period waits on.  Freed objects are kept as
tombstones whose fields all read as undefined, so any later access is a
detectable fault rather than silent reuse.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field

from .lang import (
    NULL,
    Alloc,
    AssertSite,
    Block,
    DataRead,
    DataTest,
    DataWrite,
    FieldRead,
    FieldWrite,
    FreeStmt,
    IfBool,
    IfFieldEq,
    IfFieldNull,
    Program,
    RootRead,
    Seq,
    Skip,
    Span,
    Stmt,
    SyncStart,
    SyncStop,
    VarRead,
    WhileBool,
    WhileFieldNonNull,
)


@dataclass(frozen=True, slots=True)
class Loc:
    id: int

    def __str__(self) -> str:
        return f"#{self.id}"


class _UndefVal:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "undef"


UNDEF_VAL = _UndefVal()
Val = Loc | int | bool | None | _UndefVal

FAULT_KINDS = ("UseAfterFree", "NullDeref", "DoubleFree", "RootOverwrite", "ReaderWrite",
               "OutsideCriticalSection", "UndefinedVariable", "LockNotHeld", "BadHeap")


@dataclass(frozen=True)
class Fault:
    kind: str
    tid: str
    detail: str

    def __str__(self) -> str:
        return f"{self.kind}({self.tid}: {self.detail})"


class MachineFault(Exception):
    def __init__(self, fault: Fault):
        super().__init__(str(fault))
        self.fault = fault


class HeapError(ValueError):
    pass


@dataclass(frozen=True)
class Instr:
    op: str
    args: tuple = ()
    target: int = -1
    span: Span | None = None

    def __str__(self) -> str:
        return f"{self.op}({', '.join(map(str, self.args))})"


RULE_OF = {
    "root_read": "SUpdt", "var_read": "SUpdt", "field_read": "HRead", "data_read": "HRead",
    "data_test": "HRead", "field_write": "HUpdt", "data_write": "HUpdt", "alloc": "HAlloc",
    "free": "Free", "sync_start": "RCU-SStart", "sync_stop": "RCU-SStop",
    "begin_write": "RCU-WBegin", "end_write": "RCU-WEnd", "begin_read": "RCU-RBegin",
    "end_read": "RCU-REnd", "br_bool": "Branch", "br_eq": "Branch", "br_null": "Branch",
    "loop_nn": "Branch",
}
WRITE_OPS = {"field_write", "data_write", "alloc", "free", "sync_start", "sync_stop"}
HEAP_OPS = {"root_read", "field_read", "data_read", "data_test", "field_write", "data_write",
            "alloc", "free", "br_eq", "br_null", "loop_nn", "sync_start", "sync_stop"}


def compile_stmt(stmt: Stmt, base: int = 0) -> list[Instr]:
    """Compile to instructions whose jump targets are absolute (offset by ``base``)."""
    out: list[Instr] = []

    def emit(s: Stmt) -> None:
        match s:
            case Skip() | AssertSite():
                return
            case Seq(s1=a, s2=b):
                emit(a)
                emit(b)
            case RootRead(y=y, r=r):
                out.append(Instr("root_read", (y, r), span=s.span))
            case VarRead(z=z, x=x):
                out.append(Instr("var_read", (z, x), span=s.span))
            case FieldRead(z=z, x=x, f=f):
                out.append(Instr("field_read", (z, x, f), span=s.span))
            case DataRead(v=v, x=x, f=f):
                out.append(Instr("data_read", (v, x, f), span=s.span))
            case DataTest(b=b, x=x, op=op, v=v, f=f):
                out.append(Instr("data_test", (b, x, f, op, v), span=s.span))
            case FieldWrite(x=x, f=f, y=y):
                out.append(Instr("field_write", (x, f, y), span=s.span))
            case DataWrite(x=x, v=v, f=f):
                out.append(Instr("data_write", (x, f, v), span=s.span))
            case Alloc(x=x):
                out.append(Instr("alloc", (x,), span=s.span))
            case FreeStmt(x=x):
                out.append(Instr("free", (x,), span=s.span))
            case SyncStart():
                out.append(Instr("sync_start", span=s.span))
            case SyncStop():
                out.append(Instr("sync_stop", span=s.span))
            case IfBool(x=x, s1=a, s2=b):
                branch(Instr("br_bool", (x,), span=s.span), a, b)
            case IfFieldEq(x=x, f1=f, z=z, s1=a, s2=b):
                branch(Instr("br_eq", (x, f, z), span=s.span), a, b)
            case IfFieldNull(x=x, f=f, s1=a, s2=b):
                branch(Instr("br_null", (x, f), span=s.span), a, b)
            case WhileBool(x=x, body=body):
                loop(Instr("br_bool", (x,), span=s.span), body)
            case WhileFieldNonNull(x=x, f=f, body=body, flag=flag):
                loop(Instr("loop_nn", (x, f, flag), span=s.span), body)
            case _:
                raise TypeError(f"cannot compile {s!r}")

    def branch(test: Instr, a: Stmt, b: Stmt) -> None:
        at = len(out)
        out.append(test)
        emit(a)
        jump_at = len(out)
        out.append(Instr("jump"))
        else_pc = len(out)
        emit(b)
        end = len(out)
        out[at] = Instr(test.op, test.args, base + else_pc, test.span)
        out[jump_at] = Instr("jump", (), base + end)

    def loop(test: Instr, body: Stmt) -> None:
        head = len(out)
        out.append(test)
        emit(body)
        out.append(Instr("jump", (), base + head))
        out[head] = Instr(test.op, test.args, base + len(out), test.span)

    emit(stmt)
    return out


def compile_thread(items) -> list[Instr]:
    code: list[Instr] = []
    for item in items:
        if isinstance(item, Block):
            kind = "write" if item.mode == "write" else "read"
            code.append(Instr(f"begin_{kind}", span=item.span))
            code.extend(compile_stmt(item.body, len(code)))
            code.append(Instr(f"end_{kind}", span=item.span))
        else:
            code.extend(compile_stmt(item, len(code)))
    return code


@dataclass(frozen=True)
class ThreadInfo:
    tid: str
    kind: str
    decl: str
    code: tuple[Instr, ...]
    params: tuple[tuple[str, int], ...]


@dataclass(frozen=True)
class MachineState:
    """One machine configuration.  Treat every container as immutable."""

    machine: "Machine" = field(compare=False, repr=False)
    stacks: tuple[dict, ...]
    heap: dict[int, tuple]
    freed: frozenset[int]
    lock: str | None
    rt: int
    R: frozenset[str]
    B: frozenset[str]
    pcs: tuple[int, ...]
    phases: tuple[str, ...]
    next_loc: int

    def key(self) -> tuple:
        return (
            tuple(tuple(sorted(s.items())) for s in self.stacks),
            tuple(sorted(self.heap.items())),
            self.freed, self.lock, self.rt, self.R, self.B, self.pcs, self.phases,
            self.next_loc,
        )

    def digest(self) -> str:
        return hashlib.sha1(repr(self.key()).encode()).hexdigest()[:12]

    def var(self, tid: str, x: str):
        return self.stacks[self.machine.index[tid]].get(x, UNDEF_VAL)

    def field(self, o: int, f: str):
        return self.heap[o][self.machine.slot[f]]

    def live(self) -> list[int]:
        return [o for o in self.heap if o not in self.freed]

    def done(self, tid: str) -> bool:
        i = self.machine.index[tid]
        return self.pcs[i] >= len(self.machine.threads[i].code)

    def all_done(self) -> bool:
        return all(self.pcs[i] >= len(t.code) for i, t in enumerate(self.machine.threads))

    def to_json(self) -> dict:
        m = self.machine
        return {
            "stacks": {t.tid: {k: _jval(v) for k, v in sorted(self.stacks[i].items())}
                       for i, t in enumerate(m.threads)},
            "heap": {str(o): {f: _jval(v) for f, v in zip(m.fields, vals)}
                     for o, vals in sorted(self.heap.items())},
            "freed": sorted(self.freed),
            "lock": self.lock, "rt": self.rt, "R": sorted(self.R), "B": sorted(self.B),
            "pcs": {t.tid: self.pcs[i] for i, t in enumerate(m.threads)},
        }


def _jval(v):
    if isinstance(v, Loc):
        return f"#{v.id}"
    if v is UNDEF_VAL:
        return "undef"
    return v


HeapLayout = list[tuple[int, dict[str, object]]]


class Machine:
    def __init__(self, p: Program, *, reader_count: int | None = None,
                 params: dict[str, dict[str, int]] | None = None):
        self.program = p
        self.fields = list(p.field_types)
        self.slot = {f: i for i, f in enumerate(self.fields)}
        self.rcu = [f for f in self.fields if p.field_types[f] == "rcu"]
        self.rcu_slots = [self.slot[f] for f in self.rcu]
        self.root_var = p.root_var
        threads: list[ThreadInfo] = []
        groups: list[list[int]] = []
        overrides = params or {}
        for t in p.threads:
            code = tuple(compile_thread(t.body))
            ps = dict(t.params)
            ps.update(overrides.get(t.name, {}))
            n = t.replicas
            if t.kind == "reader" and reader_count is not None:
                n = reader_count
            group = []
            for i in range(n):
                tid = t.name if n == 1 else f"{t.name}.{i + 1}"
                group.append(len(threads))
                threads.append(ThreadInfo(tid, t.kind, t.name, code, tuple(sorted(ps.items()))))
            if len(group) > 1:
                groups.append(group)
        self.threads = threads
        self.groups = groups
        self.tids = [t.tid for t in threads]
        self.index = {t.tid: i for i, t in enumerate(threads)}

    # -- construction ---------------------------------------------------------

    def init(self, layout: HeapLayout) -> MachineState:
        if not layout:
            raise HeapError("the heap needs at least a root object")
        heap: dict[int, tuple] = {}
        for loc, fields in layout:
            if loc in heap:
                raise HeapError(f"location {loc} listed twice")
            unknown = set(fields) - set(self.fields)
            if unknown:
                raise HeapError(f"unknown fields {sorted(unknown)} at location {loc}")
            vals = []
            for f in self.fields:
                v = fields.get(f)
                if f in self.rcu:
                    vals.append(None if v is None or v == NULL else Loc(int(v)))
                else:
                    vals.append(0 if v is None else int(v))
            heap[loc] = tuple(vals)
        rt = layout[0][0]
        parents: dict[int, int] = {}
        for o, vals in heap.items():
            for s in self.rcu_slots:
                v = vals[s]
                if v is None:
                    continue
                if v.id not in heap:
                    raise HeapError(f"location {o} points at missing location {v.id}")
                if v.id == rt:
                    raise HeapError("the root cannot have a parent")
                if v.id in parents:
                    raise HeapError(f"location {v.id} has two parents")
                parents[v.id] = o
        seen = {rt}
        work = [rt]
        while work:
            o = work.pop()
            for s in self.rcu_slots:
                v = heap[o][s]
                if v is not None and v.id not in seen:
                    seen.add(v.id)
                    work.append(v.id)
        if seen != set(heap):
            raise HeapError(f"locations {sorted(set(heap) - seen)} are not reachable from the root")
        stacks = tuple(dict(t.params) for t in self.threads)
        st = MachineState(self, stacks, heap, frozenset(), None, rt, frozenset(), frozenset(),
                          tuple(0 for _ in self.threads), tuple("outside" for _ in self.threads),
                          max(heap) + 1)
        return st

    # -- scheduling ------------------------------------------------------------

    def pending(self, st: MachineState, tid: str) -> Instr | None:
        i = self.index[tid]
        code = self.threads[i].code
        pc = st.pcs[i]
        return code[pc] if pc < len(code) else None

    def enabled(self, st: MachineState, tid: str) -> bool:
        ins = self.pending(st, tid)
        if ins is None:
            return False
        match ins.op:
            case "begin_write":
                return st.lock is None
            case "begin_read":
                return st.lock != tid
            case "sync_start" | "sync_stop" | "free":
                return not st.B
        return True

    def enabled_tids(self, st: MachineState) -> list[str]:
        return [t for t in self.tids if self.enabled(st, t)]

    def _advance(self, code: tuple[Instr, ...], pc: int) -> int:
        while pc < len(code) and code[pc].op == "jump":
            pc = code[pc].target
        return pc

    def step(self, st: MachineState, tid: str) -> MachineState:
        """Run the pending instruction of ``tid``; raises MachineFault."""
        i = self.index[tid]
        info = self.threads[i]
        pc = self._advance(info.code, st.pcs[i])
        if pc >= len(info.code):
            raise ValueError(f"thread {tid} has finished")
        ins = info.code[pc]
        phase = st.phases[i]
        if phase == "outside" and ins.op in HEAP_OPS:
            raise MachineFault(Fault("OutsideCriticalSection", tid, f"{ins} outside a critical section"))
        if phase == "read" and ins.op in WRITE_OPS:
            raise MachineFault(Fault("ReaderWrite", tid, f"{ins} inside a read-side critical section"))
        stack = st.stacks[i]
        new_stack: dict | None = None
        heap = st.heap
        changes: dict = {}
        next_pc = pc + 1

        def get(x: str):
            if x == self.root_var:
                return Loc(st.rt)
            if x not in stack:
                raise MachineFault(Fault("UndefinedVariable", tid, f"{x} has no value"))
            return stack[x]

        def deref(x: str) -> int:
            v = get(x)
            if v is None:
                raise MachineFault(Fault("NullDeref", tid, f"{x} is null"))
            if v is UNDEF_VAL:
                raise MachineFault(Fault("UseAfterFree", tid, f"{x} holds an undefined value"))
            if not isinstance(v, Loc):
                raise MachineFault(Fault("UndefinedVariable", tid, f"{x} does not hold a location"))
            if v.id in st.freed:
                raise MachineFault(Fault("UseAfterFree", tid, f"{x} points at freed location {v.id}"))
            return v.id

        def load(o: int, f: str):
            v = heap[o][self.slot[f]]
            if v is UNDEF_VAL:
                raise MachineFault(Fault("UseAfterFree", tid, f"field {f} of {o} is undefined"))
            return v

        def setvar(x: str, v) -> None:
            nonlocal new_stack
            if new_stack is None:
                new_stack = dict(stack)
            new_stack[x] = v

        def store(o: int, f: str, v) -> None:
            nonlocal heap
            if heap is st.heap:
                heap = dict(st.heap)
            vals = list(heap[o])
            vals[self.slot[f]] = v
            heap[o] = tuple(vals)

        a = ins.args
        match ins.op:
            case "root_read":
                setvar(a[0], Loc(st.rt))
            case "var_read":
                setvar(a[0], get(a[1]))
            case "field_read" | "data_read":
                setvar(a[0], load(deref(a[1]), a[2]))
            case "data_test":
                b, x, f, op, v = a
                lhs = load(deref(x), f)
                rhs = get(v) if isinstance(v, str) else v
                setvar(b, {"==": lhs == rhs, "!=": lhs != rhs, "<": lhs < rhs, ">": lhs > rhs}[op])
            case "field_write":
                x, f, y = a
                o = deref(x)
                v = None if y == NULL else get(y)
                if v is UNDEF_VAL:
                    raise MachineFault(Fault("UseAfterFree", tid, f"{y} holds an undefined value"))
                if isinstance(v, Loc) and v.id == st.rt:
                    raise MachineFault(Fault("RootOverwrite", tid, "the root cannot be stored in the heap"))
                if v is not None and not isinstance(v, Loc):
                    raise MachineFault(Fault("UndefinedVariable", tid, f"{y} does not hold a location"))
                store(o, f, v)
            case "data_write":
                x, f, v = a
                o = deref(x)
                store(o, f, get(v) if isinstance(v, str) else v)
            case "alloc":
                loc = st.next_loc
                if heap is st.heap:
                    heap = dict(st.heap)
                heap[loc] = tuple(None if f in self.rcu else 0 for f in self.fields)
                setvar(a[0], Loc(loc))
                changes["next_loc"] = loc + 1
            case "free":
                v = get(a[0])
                if not isinstance(v, Loc):
                    raise MachineFault(Fault("NullDeref" if v is None else "UndefinedVariable", tid,
                                             f"{a[0]} does not hold a location"))
                if v.id in st.freed:
                    raise MachineFault(Fault("DoubleFree", tid, f"location {v.id} freed twice"))
                if v.id == st.rt:
                    raise MachineFault(Fault("RootOverwrite", tid, "the root cannot be freed"))
                heap = dict(st.heap)
                heap[v.id] = tuple(UNDEF_VAL for _ in self.fields)
                changes["freed"] = st.freed | {v.id}
            case "sync_start":
                changes["B"] = st.R
            case "sync_stop":
                pass
            case "begin_write":
                changes["lock"] = tid
                changes["phase"] = "write"
            case "end_write":
                if st.lock != tid:
                    raise MachineFault(Fault("LockNotHeld", tid, "WriteEnd without holding the lock"))
                changes["lock"] = None
                changes["phase"] = "outside"
            case "begin_read":
                changes["R"] = st.R | {tid}
                changes["phase"] = "read"
            case "end_read":
                changes["R"] = st.R - {tid}
                changes["B"] = st.B - {tid}
                changes["phase"] = "outside"
            case "br_bool":
                v = get(a[0])
                if not v:
                    next_pc = ins.target
            case "br_eq":
                x, f, z = a
                if load(deref(x), f) != get(z):
                    next_pc = ins.target
            case "br_null":
                x, f = a
                if load(deref(x), f) is not None:
                    next_pc = ins.target
            case "loop_nn":
                x, f, flag = a
                go = load(deref(x), f) is not None
                if go and flag is not None:
                    go = bool(get(flag))
                if not go:
                    next_pc = ins.target
            case _:
                raise ValueError(f"unknown instruction {ins.op}")

        stacks = st.stacks
        if new_stack is not None:
            stacks = stacks[:i] + (new_stack,) + stacks[i + 1:]
        pcs = list(st.pcs)
        pcs[i] = self._advance(info.code, next_pc)
        phases = st.phases
        if "phase" in changes:
            phases = phases[:i] + (changes["phase"],) + phases[i + 1:]
        return MachineState(
            self, stacks, heap, changes.get("freed", st.freed), changes.get("lock", st.lock),
            st.rt, changes.get("R", st.R), changes.get("B", st.B), tuple(pcs), phases,
            changes.get("next_loc", st.next_loc),
        )

    def reachable(self, st: MachineState) -> set[int]:
        seen = {st.rt}
        work = [st.rt]
        while work:
            o = work.pop()
            vals = st.heap[o]
            for s in self.rcu_slots:
                v = vals[s]
                if isinstance(v, Loc) and v.id not in seen and v.id not in st.freed:
                    seen.add(v.id)
                    work.append(v.id)
        return seen


def init(p: Program, layout: HeapLayout, **kw) -> MachineState:
    return Machine(p, **kw).init(layout)


def enabled(st: MachineState, tid: str) -> bool:
    return st.machine.enabled(st, tid)


def step(st: MachineState, tid: str) -> MachineState:
    return st.machine.step(st, tid)


# -- heap text -------------------------------------------------------------------

_HEAP_LINE = re.compile(r"^\(\s*(-?\d+)\s*((?:,\s*[A-Za-z_]\w*\s*=\s*[^,)]+\s*)*)\)$")


def parse_heap(text: str) -> HeapLayout:
    """Parse ``(loc, field=value, ...)`` lines; the first line is the root."""
    cells: HeapLayout = []
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _HEAP_LINE.match(line)
        if not m:
            raise HeapError(f"line {n}: expected '(loc, field=value, ...)', got {raw.strip()!r}")
        fields: dict[str, object] = {}
        for part in filter(None, (p.strip() for p in m.group(2).split(","))):
            name, value = (s.strip() for s in part.split("=", 1))
            fields[name] = None if value == NULL else int(value)
        cells.append((int(m.group(1)), fields))
    return cells


def format_heap(cells: HeapLayout) -> str:
    lines = []
    for loc, fields in cells:
        parts = [str(loc)] + [f"{k}={'null' if v is None else v}" for k, v in fields.items()]
        lines.append("(" + ", ".join(parts) + ")")
    return "\n".join(lines) + "\n"


def list_heap(n: int, field_name: str = "Next") -> HeapLayout:
    """Root followed by ``n`` nodes holding data 1..n."""
    cells: HeapLayout = [(0, {field_name: 1 if n else None})]
    for i in range(1, n + 1):
        cells.append((i, {field_name: i + 1 if i < n else None, "data": i}))
    return cells


def tree_heap(keys: list[int], left: str = "Left", right: str = "Right") -> HeapLayout:
    """Binary search tree over ``keys`` (insertion order) hung under root.right."""
    nodes: dict[int, dict[str, object]] = {0: {left: None, right: None}}
    order: list[int] = [0]
    for i, key in enumerate(keys, 1):
        nodes[i] = {left: None, right: None, "data": key}
        order.append(i)
        if i == 1:
            nodes[0][right] = 1
            continue
        cur = 1
        while True:
            side = left if key < nodes[cur]["data"] else right
            nxt = nodes[cur][side]
            if nxt is None:
                nodes[cur][side] = i
                break
            cur = nxt
    return [(o, nodes[o]) for o in order]
