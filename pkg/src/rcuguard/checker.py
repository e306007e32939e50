"""Flow-sensitive type checker for RCU critical sections.

The checker walks each thread in program order.  Inside ``rcu_write`` blocks
statements are checked against the write-side rules, inside ``rcu_read``
blocks against the read-side rules, and between blocks only scalar
statements are allowed.  The first failed premise stops the thread and is
reported as a :class:`Diagnostic` naming the rule that was attempted.

Heap writes ``x.f = y`` are dispatched on the types involved:

* ``x`` fresh                        -> T-WriteFH
* ``y`` fresh, ``x.f`` held ``o``    -> T-Replace when the two maps agree,
                                        otherwise T-Insert
* ``y`` fresh, ``x.f`` was null      -> T-LinkF-Null
* ``y`` an iterator                  -> T-UnlinkH

Subsumption is only applied where control flow meets: branch joins and loop
heads.  Loops that read the heap inside a write block carry an
``@invariant`` annotation; the body must map the invariant back onto itself
after the ``@reindex`` contraction.
"""

from __future__ import annotations

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
    NOWHERE,
    Program,
    RootRead,
    Seq,
    Skip,
    Span,
    Stmt,
    SyncStart,
    SyncStop,
    ThreadDecl,
    VarRead,
    WhileBool,
    WhileFieldNonNull,
    flatten,
    free_vars,
    walk,
)
from .paths import EMPTY, EPS, Path, may_alias, may_extend, step
from .typesys import (
    BARE,
    BOOL,
    DATA,
    FREEABLE,
    LINEAR,
    ROOT,
    UNDEF,
    UNLINKED,
    AnnotationError,
    Bool,
    Data,
    RcuFresh,
    RcuItr,
    RcuItrBare,
    RcuRoot,
    RcuType,
    TypeEnv,
    Undef,
    Unlinked,
    env_gate,
    env_indices,
    env_instantiate,
    env_reindex,
    env_subtype,
    join_env,
    parse_env_partial,
)

WRITE, READ, OUTSIDE = "write", "read", "outside"
DEFAULT_FIELDS = {"Next": "rcu", "data": "normal"}


@dataclass
class Diagnostic:
    rule: str
    span: Span
    message: str
    env_before: TypeEnv
    thread: str | None = None

    def __str__(self) -> str:
        where = f"{self.thread}@" if self.thread else ""
        return f"{where}{self.span}: [{self.rule}] {self.message}"

    def to_json(self) -> dict:
        return {
            "rule": self.rule,
            "span": {"line": self.span.line, "col": self.span.col},
            "message": self.message,
            "thread": self.thread,
            "env_before": self.env_before.to_json(),
        }


class CheckFailure(Exception):
    def __init__(self, diagnostic: Diagnostic):
        super().__init__(str(diagnostic))
        self.diagnostic = diagnostic


@dataclass
class ThreadReport:
    name: str
    ok: bool
    diagnostic: Diagnostic | None = None
    final_env: TypeEnv | None = None


@dataclass
class CheckReport:
    threads: list[ThreadReport]
    sites: list[tuple[AssertSite, str, TypeEnv | None]] = field(default_factory=list)
    applied: list[tuple[str | None, Span, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(t.ok for t in self.threads)

    @property
    def diagnostics(self) -> list[Diagnostic]:
        return [t.diagnostic for t in self.threads if t.diagnostic is not None]

    def to_json(self) -> dict:
        return {
            "ok": self.ok,
            "threads": [
                {"name": t.name, "ok": t.ok,
                 "diagnostic": t.diagnostic.to_json() if t.diagnostic else None}
                for t in self.threads
            ],
        }


class Checker:
    def __init__(self, field_types: dict[str, str] | None = None, root: str = "head",
                 bound: int = 3):
        self.field_types = dict(field_types or DEFAULT_FIELDS)
        self.rcu_fields = sorted(f for f, k in self.field_types.items() if k == "rcu")
        self.root = root
        self.bound = bound
        self.sites: dict[int, TypeEnv] = {}
        self.escaped: dict[str, str] = {}
        self.thread: str | None = None
        self.applied: list[tuple[str | None, Span, str]] = []

    def note(self, rule: str, stmt: Stmt) -> None:
        self.applied.append((self.thread, getattr(stmt, "span", NOWHERE), rule))

    # -- failure reporting ------------------------------------------------

    def fail(self, rule: str, message: str, env: TypeEnv, stmt: Stmt | None) -> CheckFailure:
        span = getattr(stmt, "span", NOWHERE) if stmt is not None else NOWHERE
        if stmt is not None:
            for v in sorted(free_vars(stmt)):
                if v in self.escaped and isinstance(env[v], Undef):
                    rule = self.escaped[v]
                    message = f"{v} was obtained in an earlier critical section and used after it ended; {message}"
                    break
        return CheckFailure(Diagnostic(rule, span, message, env, self.thread))

    def assignable(self, env: TypeEnv, z: str, rule: str, exclude: tuple[str, ...],
                   stmt: Stmt) -> None:
        t = env[z]
        if isinstance(t, LINEAR):
            raise self.fail(rule, f"assigning {z} would drop its {t} reference", env, stmt)
        if isinstance(t, RcuRoot):
            raise self.fail(rule, f"{z} is the root and cannot be reassigned", env, stmt)
        if z in env.referenced(exclude):
            holders = sorted(
                x for x, tt in env.items()
                if x not in exclude and isinstance(tt, (RcuItr, RcuFresh)) and z in tt.fmap.targets()
            )
            raise self.fail(rule, f"{z} is still named in the field map of {', '.join(holders)}", env, stmt)

    # -- atomic statements ------------------------------------------------

    def check_atomic(self, env: TypeEnv, stmt: Stmt, mode: str) -> TypeEnv:
        match stmt:
            case Skip():
                return env
            case AssertSite():
                self.sites[id(stmt)] = env
                return env
            case RootRead(y=y, r=r):
                return self.root_read(env, y, r, mode, stmt)
            case VarRead(z=z, x=x):
                return self.var_read(env, z, x, mode, stmt)
            case FieldRead(z=z, x=x, f=f):
                return self.field_read(env, z, x, f, mode, stmt)
            case DataRead(v=v, x=x):
                self.data_source(env, x, mode, stmt)
                self.assignable(env, v, "artifact", (v,), stmt)
                return env.set(v, DATA)
            case DataTest(b=b, x=x, v=v):
                self.data_source(env, x, mode, stmt)
                self.data_operand(env, v, stmt)
                self.assignable(env, b, "artifact", (b,), stmt)
                return env.set(b, BOOL)
            case DataWrite(x=x, v=v):
                if mode != WRITE:
                    raise self.mode_error(env, stmt, mode)
                if not isinstance(env[x], (RcuItr, RcuFresh)):
                    raise self.fail("artifact", f"{x} is {env[x]}; data writes need an rcuItr or rcuFresh reference", env, stmt)
                self.data_operand(env, v, stmt)
                return env
            case Alloc(x=x):
                if mode != WRITE:
                    raise self.mode_error(env, stmt, mode)
                self.assignable(env, x, "T-Alloc", (x,), stmt)
                return env.set(x, RcuFresh(EMPTY))
            case FreeStmt(x=x):
                if mode != WRITE:
                    raise self.mode_error(env, stmt, mode)
                if not isinstance(env[x], type(FREEABLE)):
                    raise self.fail("T-Free", f"{x} is {env[x]}, not freeable", env, stmt)
                return env.without(x)
            case SyncStart():
                if mode != WRITE:
                    raise self.mode_error(env, stmt, mode)
                return env
            case SyncStop():
                if mode != WRITE:
                    raise self.mode_error(env, stmt, mode)
                return env.with_all({x: FREEABLE for x, t in env.items() if isinstance(t, Unlinked)})
            case FieldWrite():
                if mode != WRITE:
                    raise self.mode_error(env, stmt, mode)
                return self.field_write(env, stmt)
        raise TypeError(f"not an atomic statement: {stmt!r}")

    def mode_error(self, env: TypeEnv, stmt: Stmt, mode: str) -> CheckFailure:
        if mode == READ:
            return self.fail("ToRCURead", "read-side critical sections cannot modify the heap, allocate, free or synchronize", env, stmt)
        return self.fail("artifact", "heap operations are only allowed inside a critical section", env, stmt)

    def data_source(self, env: TypeEnv, x: str, mode: str, stmt: Stmt) -> None:
        t = env[x]
        ok = isinstance(t, (RcuItr, RcuFresh)) if mode == WRITE else isinstance(t, RcuItrBare)
        if mode == OUTSIDE:
            raise self.mode_error(env, stmt, mode)
        if not ok:
            raise self.fail("artifact", f"{x} is {t}; cannot read its data field here", env, stmt)

    def data_operand(self, env: TypeEnv, v: str | int, stmt: Stmt) -> None:
        if isinstance(v, str) and not isinstance(env[v], Data):
            raise self.fail("artifact", f"{v} is {env[v]}, not a data value", env, stmt)

    def root_read(self, env: TypeEnv, y: str, r: str, mode: str, stmt: Stmt) -> TypeEnv:
        if mode == OUTSIDE:
            raise self.mode_error(env, stmt, mode)
        if not isinstance(env[r], RcuRoot):
            raise self.fail("T-Root", f"{r} is {env[r]}, not the root", env, stmt)
        self.assignable(env, y, "T-Root", (y,), stmt)
        return env.set(y, RcuItr(EPS, EMPTY) if mode == WRITE else BARE)

    def var_read(self, env: TypeEnv, z: str, x: str, mode: str, stmt: Stmt) -> TypeEnv:
        t = env[x]
        if z == x:
            return env
        if isinstance(t, (Bool, Data)):
            self.assignable(env, z, "artifact", (z,), stmt)
            return env.set(z, t)
        if mode == OUTSIDE:
            raise self.mode_error(env, stmt, mode)
        if isinstance(t, RcuRoot):
            return self.root_read(env, z, x, mode, stmt)
        want = RcuItr if mode == WRITE else RcuItrBare
        if not isinstance(t, want):
            raise self.fail("T-ReadS", f"{x} is {t}, not an rcuItr reference", env, stmt)
        self.assignable(env, z, "T-ReadS", (z,), stmt)
        return env.set(z, t)

    def field_read(self, env: TypeEnv, z: str, x: str, f: str, mode: str, stmt: Stmt) -> TypeEnv:
        if mode == OUTSIDE:
            raise self.mode_error(env, stmt, mode)
        t = env[x]
        if z == x:
            raise self.fail("T-ReadH", f"{z} cannot be overwritten by its own field", env, stmt)
        if mode == READ:
            if not isinstance(t, RcuItrBare):
                raise self.fail("T-ReadH", f"{x} is {t}, not an rcuItr reference", env, stmt)
            self.assignable(env, z, "T-ReadH", (z,), stmt)
            return env.set(z, BARE)
        if not isinstance(t, RcuItr):
            raise self.fail("T-ReadH", f"{x} is {t}, not an rcuItr reference", env, stmt)
        self.assignable(env, z, "T-ReadH", (x, z), stmt)
        fmap = t.fmap.without_target(z).set(f, z)
        return env.with_all({x: RcuItr(t.path, fmap), z: RcuItr(t.path.dot(f), EMPTY)})

    # -- heap writes ----------------------------------------------------------

    def field_write(self, env: TypeEnv, st: FieldWrite) -> TypeEnv:
        x, f, y = st.x, st.f, st.y
        tx = env[x]
        ty = env[y] if y != NULL else None
        if isinstance(tx, RcuFresh):
            return self.write_fresh(env, x, f, y, tx, st)
        if not isinstance(tx, RcuItr):
            rule = "T-Replace" if isinstance(ty, RcuFresh) else "T-UnlinkH"
            raise self.fail(rule, f"{x} is {tx}; heap writes need an rcuItr or rcuFresh target", env, st)
        if ty is None:
            raise self.fail("T-UnlinkH", f"storing null into {x}.{f} of a linked node is not supported", env, st)
        if isinstance(ty, RcuFresh):
            found, o = tx.fmap.lookup(f)
            if not found:
                raise self.fail("T-Replace", f"{x}.{f} is not recorded in the field map of {x}", env, st)
            if o is None:
                return self.link_null(env, x, f, y, tx, ty, st)
            return self.replace_or_insert(env, x, f, o, y, tx, ty, st)
        if isinstance(ty, RcuItr):
            return self.unlink(env, x, f, y, tx, ty, st)
        raise self.fail("T-UnlinkH", f"{y} is {ty}; only rcuItr or rcuFresh references can be stored", env, st)

    def write_fresh(self, env: TypeEnv, p: str, f: str, z: str, tp: RcuFresh, st: Stmt) -> TypeEnv:
        found, _ = tp.fmap.lookup(f)
        if found or any(f in k for k, _ in tp.fmap.entries):
            raise self.fail("T-WriteFH", f"{p}.{f} was already initialized", env, st)
        if z == NULL:
            self.note("T-WriteFH", st)
            return env.set(p, RcuFresh(tp.fmap.set(f, None)))
        tz = env[z]
        if not isinstance(tz, RcuItr):
            raise self.fail("T-WriteFH", f"{z} is {tz}; a fresh node may only point at linked nodes", env, st)
        witness = [
            w for w, tw in env.items()
            if w != p and isinstance(tw, RcuItr) and tw.fmap.lookup(f) == (True, z)
            and tw.path.dot(f) == tz.path
        ]
        if not witness:
            raise self.fail("T-WriteFH", f"no rcuItr reference records {z} as its {f} child", env, st)
        self.note("T-WriteFH", st)
        return env.set(p, RcuFresh(tp.fmap.set(f, z)))

    def others(self, env: TypeEnv, *names: str) -> list[tuple[str, RcuItr]]:
        return sorted((w, t) for w, t in env.without(*names).items() if isinstance(t, RcuItr))

    def named_elsewhere(self, env: TypeEnv, names: tuple[str, ...], exclude: tuple[str, ...],
                        rule: str, st: Stmt) -> None:
        for w, t in sorted(env.items()):
            if w in exclude or not isinstance(t, (RcuItr, RcuFresh)):
                continue
            hit = t.fmap.targets() & set(names)
            if hit:
                raise self.fail(rule, f"{w} still records {', '.join(sorted(hit))} in its field map", env, st)

    def replace_or_insert(self, env: TypeEnv, p: str, f: str, o: str, n: str,
                          tp: RcuItr, tn: RcuFresh, st: Stmt) -> TypeEnv:
        to = env[o]
        if not isinstance(to, RcuItr) or to.path != tp.path.dot(f):
            rule = "T-Replace" if isinstance(to, RcuItr) and len(to.fmap) == len(tn.fmap) else "T-Insert"
            raise self.fail(rule, f"{o} must be an rcuItr at path {tp.path.dot(f)}, found {to}", env, st)
        if to.fmap == tn.fmap:
            self.named_elsewhere(env, (p, o, n), (p, o, n), "T-Replace", st)
            for w, tw in self.others(env, p, o, n):
                for rho, who in ((tp.path, p), (to.path, o)):
                    if may_alias(tw.path, rho, self.bound):
                        raise self.fail("T-Replace", f"{w} at {tw.path} may alias {who} at {rho}", env, st)
            self.note("T-Replace", st)
            return env.with_all({
                p: RcuItr(tp.path, tp.fmap.set(f, n)),
                o: UNLINKED,
                n: RcuItr(to.path, tn.fmap),
            })
        f4 = [k for k, t in tn.fmap.entries if t == o]
        inserted = (
            len(f4) == 1 and len(f4[0]) == 1
            and all(t is None for k, t in tn.fmap.entries if k != f4[0])
        )
        if not inserted:
            same_keys = {k for k, _ in to.fmap.entries} == {k for k, _ in tn.fmap.entries}
            rule = "T-Replace" if same_keys else "T-Insert"
            raise self.fail(
                rule,
                f"fresh {n} {tn.fmap} neither copies {o} {to.fmap} nor links to {o} with null siblings",
                env, st)
        self.named_elsewhere(env, (p, o, n), (p, o, n), "T-Insert", st)
        for w, tw in self.others(env, p, o, n):
            if may_extend(tp.path, tw.path, self.bound):
                raise self.fail("T-Insert", f"{w} at {tw.path} may lie below {p} at {tp.path}", env, st)
        (f4_name,) = f4[0]
        self.note("T-Insert", st)
        return env.with_all({
            p: RcuItr(tp.path, tp.fmap.set(f, n)),
            n: RcuItr(to.path, tn.fmap),
            o: RcuItr(to.path.dot(f4_name), to.fmap),
        })

    def link_null(self, env: TypeEnv, p: str, f: str, n: str, tp: RcuItr, tn: RcuFresh,
                  st: Stmt) -> TypeEnv:
        if not tn.fmap.only_null():
            raise self.fail("T-LinkF-Null", f"fresh {n} {tn.fmap} has non-null fields but {p}.{f} was null", env, st)
        self.named_elsewhere(env, (n,), (p, n), "T-LinkF-Null", st)
        slot = tp.path.dot(f)
        for w, tw in self.others(env, p, n):
            if may_alias(tw.path, slot, self.bound) or may_extend(slot, tw.path, self.bound):
                raise self.fail("T-LinkF-Null", f"{w} at {tw.path} may sit at or below the empty slot {slot}", env, st)
            if may_alias(tw.path, tp.path, self.bound) and any(f in k for k, _ in tw.fmap.entries):
                raise self.fail("T-LinkF-Null", f"{w} may alias {p} and records its {f} field", env, st)
        self.note("T-LinkF-Null", st)
        return env.with_all({
            p: RcuItr(tp.path, tp.fmap.set(f, n)),
            n: RcuItr(slot, tn.fmap),
        })

    def unlink(self, env: TypeEnv, x: str, f1: str, r: str, tx: RcuItr, tr: RcuItr,
               st: Stmt) -> TypeEnv:
        found, z = tx.fmap.lookup(f1)
        if not found or z is None:
            raise self.fail("T-UnlinkH", f"{x}.{f1} is not recorded as holding a variable", env, st)
        tz = env[z]
        if not isinstance(tz, RcuItr) or tz.path != tx.path.dot(f1):
            raise self.fail("T-UnlinkH", f"{z} must be an rcuItr at path {tx.path.dot(f1)}, found {tz}", env, st)
        f2s = [k for k, t in tz.fmap.entries if t == r and len(k) == 1]
        if not f2s:
            raise self.fail("T-UnlinkH", f"{r} is not recorded as a child of {z}", env, st)
        (f2,) = f2s[0]
        if tr.path != tz.path.dot(f2):
            raise self.fail("T-UnlinkH", f"{r} must be at path {tz.path.dot(f2)}, found {tr.path}", env, st)
        for g in self.rcu_fields:
            if g == f2:
                continue
            known, t = tz.fmap.lookup(g)
            if not known:
                raise self.fail("T-UnlinkH", f"{z}.{g} is not known to be null; unlinking would detach it", env, st)
            if t is not None:
                raise self.fail("T-UnlinkH", f"{z}.{g} holds {t}; unlinking {z} would detach it", env, st)
        self.named_elsewhere(env, (z, r), (x, z, r), "T-UnlinkH", st)
        for w, tw in self.others(env, x, z, r):
            for rho, who in ((tx.path, x), (tz.path, z), (tr.path, r)):
                if may_alias(tw.path, rho, self.bound):
                    raise self.fail("T-UnlinkH", f"{w} at {tw.path} may alias {who} at {rho}", env, st)
            if may_extend(tr.path, tw.path, self.bound):
                raise self.fail("T-UnlinkH", f"{w} at {tw.path} may lie below {r} at {tr.path}", env, st)
        self.note("T-UnlinkH", st)
        return env.with_all({
            z: UNLINKED,
            x: RcuItr(tx.path, tx.fmap.set(f1, r)),
            r: RcuItr(tz.path, tr.fmap),
        })

    # -- compound statements ------------------------------------------------

    def check_stmt(self, env: TypeEnv, stmt: Stmt, mode: str) -> TypeEnv:
        match stmt:
            case Seq():
                items = flatten(stmt)
                for i, s in enumerate(items):
                    if isinstance(s, SyncStart):
                        nxt = items[i + 1] if i + 1 < len(items) else None
                        if not isinstance(nxt, SyncStop):
                            raise self.fail("T-Sync", "SyncStart must be immediately followed by SyncStop", env, s)
                        env = self.check_atomic(env, s, mode)
                    else:
                        env = self.check_stmt(env, s, mode)
                return env
            case SyncStart():
                raise self.fail("T-Sync", "SyncStart must be immediately followed by SyncStop", env, stmt)
            case IfBool(x=x, s1=a, s2=b):
                if not isinstance(env[x], Bool):
                    raise self.fail("T-Branch2", f"{x} is {env[x]}, not bool", env, stmt)
                return self.join(env, self.check_stmt(env, a, mode), self.check_stmt(env, b, mode), stmt)
            case IfFieldEq(x=x, f1=f1, z=z, s1=a, s2=b):
                self.require_ref(env, x, mode, "T-Branch1", stmt)
                self.require_ref(env, z, mode, "T-Branch1", stmt)
                then_env, else_env = self.refine_eq(env, x, f1, z) if mode == WRITE else (env, env)
                return self.join(env, self.check_stmt(then_env, a, mode),
                                 self.check_stmt(else_env, b, mode), stmt)
            case IfFieldNull(x=x, f=f, s1=a, s2=b):
                self.require_ref(env, x, mode, "T-Branch3", stmt)
                then_env = self.refine_null(env, x, f)
                return self.join(env, self.check_stmt(then_env, a, mode), self.check_stmt(env, b, mode), stmt)
            case WhileBool() | WhileFieldNonNull():
                return self.check_loop(env, stmt, mode)
        return self.check_atomic(env, stmt, mode)

    def require_ref(self, env: TypeEnv, x: str, mode: str, rule: str, stmt: Stmt) -> None:
        if mode == OUTSIDE:
            raise self.mode_error(env, stmt, mode)
        want = (RcuItr, RcuFresh) if mode == WRITE else (RcuItrBare,)
        if not isinstance(env[x], want):
            raise self.fail(rule, f"{x} is {env[x]}, not an rcuItr reference", env, stmt)

    def join(self, env: TypeEnv, a: TypeEnv, b: TypeEnv, stmt: Stmt) -> TypeEnv:
        j, blocker = join_env(a, b)
        if j is None:
            raise self.fail("T-Conseq", f"branches disagree on {blocker}: {a[blocker]} vs {b[blocker]}", env, stmt)
        return j

    def refine_eq(self, env: TypeEnv, x: str, f1: str, z: str) -> tuple[TypeEnv, TypeEnv]:
        tx, tz = env[x], env[z]
        if not isinstance(tx, RcuItr) or not isinstance(tz, RcuItr):
            return env, env
        key = tx.fmap.key_of_target(z)
        if key is None or f1 not in key or len(key) == 1:
            return env, env
        then_key = frozenset((f1,))
        else_key = key - then_key
        return (self.narrow(env, x, z, key, then_key), self.narrow(env, x, z, key, else_key))

    def narrow(self, env: TypeEnv, x: str, z: str, key: frozenset[str],
               new_key: frozenset[str]) -> TypeEnv:
        tx, tz = env[x], env[z]
        assert isinstance(tx, RcuItr) and isinstance(tz, RcuItr)
        env = env.set(x, RcuItr(tx.path, tx.fmap.rekey(key, new_key)))
        n = len(tx.path)
        if len(tz.path) != n + 1 or not tz.path.starts_with(tx.path) or tz.path.segs[n].fields != key:
            return env
        old = tz.path
        new = Path(tx.path.segs + (step(new_key),))
        seen: set[str] = set()
        work = [z]
        while work:
            v = work.pop()
            if v in seen:
                continue
            seen.add(v)
            tv = env[v]
            if not isinstance(tv, RcuItr) or not tv.path.starts_with(old):
                continue
            env = env.set(v, RcuItr(Path(new.segs + tv.path.segs[len(old):]), tv.fmap))
            work.extend(sorted(tv.fmap.targets()))
        return env

    def refine_null(self, env: TypeEnv, x: str, f: str) -> TypeEnv:
        tx = env[x]
        if isinstance(tx, RcuItr):
            found, y = tx.fmap.lookup(f)
            env = env.set(x, RcuItr(tx.path, tx.fmap.set(f, None)))
            if found and y is not None and not isinstance(env[y], LINEAR):
                env = self.forget(env, y)
        return env

    def forget(self, env: TypeEnv, y: str) -> TypeEnv:
        env = env.without(y)
        changes: dict[str, RcuType] = {}
        for w, tw in env.items():
            if isinstance(tw, RcuItr) and y in tw.fmap.targets():
                changes[w] = RcuItr(tw.path, tw.fmap.without_target(y))
        return env.with_all(changes)

    def check_loop(self, env: TypeEnv, stmt: WhileBool | WhileFieldNonNull, mode: str) -> TypeEnv:
        rule = "T-Loop1" if isinstance(stmt, WhileBool) else "T-Loop2"
        if isinstance(stmt, WhileBool):
            if not isinstance(env[stmt.x], Bool):
                raise self.fail(rule, f"{stmt.x} is {env[stmt.x]}, not bool", env, stmt)
        else:
            self.require_ref(env, stmt.x, mode, rule, stmt)
            if stmt.flag and not isinstance(env[stmt.flag], Bool):
                raise self.fail(rule, f"{stmt.flag} is {env[stmt.flag]}, not bool", env, stmt)
        if mode != WRITE:
            inv = env
            for _ in range(16):
                out = self.check_stmt(inv, stmt.body, mode)
                nxt = self.join(env, inv, out, stmt)
                if nxt == inv:
                    break
                inv = nxt
            else:
                raise self.fail(rule, "loop environment did not stabilize", env, stmt)
            return inv
        if stmt.annot is None:
            out = self.check_stmt(env, stmt.body, mode)
            if not env_subtype(out, env):
                raise self.fail(rule, "loop body changes the environment; add an @invariant annotation", env, stmt)
            return self.loop_exit(env, stmt)
        try:
            asserted = parse_env_partial(stmt.annot.invariant)
        except AnnotationError as e:
            raise self.fail("artifact", f"bad invariant annotation: {e}", env, stmt) from e
        inv = env.with_all(asserted)
        in_use = env_indices(env)
        entry = inv
        for k, _ in stmt.annot.reindex:
            if k in in_use:
                raise self.fail("T-ReIndex", f"index variable {k} is already used by the entry environment", env, stmt)
            entry = env_instantiate(entry, k, 0)
        if not env_subtype(env, entry):
            bad = self.first_mismatch(env, entry)
            raise self.fail(rule, f"entry environment does not establish the invariant at {bad}: "
                                  f"{env[bad]} vs {entry[bad]}", env, stmt)
        out = self.check_stmt(inv, stmt.body, mode)
        for k, f in stmt.annot.reindex:
            out = env_reindex(out, k, f)
        if not env_subtype(out, inv):
            bad = self.first_mismatch(out, inv)
            raise self.fail("T-ReIndex", f"loop body does not restore the invariant at {bad}: "
                                         f"{out[bad]} vs {inv[bad]}", inv, stmt)
        return self.loop_exit(inv, stmt)

    @staticmethod
    def first_mismatch(a: TypeEnv, b: TypeEnv) -> str:
        for x in sorted(set(a) | set(b)):
            if not env_subtype(TypeEnv({x: a[x]}), TypeEnv({x: b[x]})):
                return x
        return "?"

    def loop_exit(self, inv: TypeEnv, stmt: Stmt) -> TypeEnv:
        if isinstance(stmt, WhileFieldNonNull) and stmt.flag is None:
            return self.refine_null(inv, stmt.x, stmt.f)
        return inv

    # -- blocks and programs --------------------------------------------------

    def check_block(self, env0: TypeEnv, block: Block) -> TypeEnv:
        mode = block.mode
        env = self.check_stmt(env0, block.body, mode)
        gate_rule = "ToRCUWrite" if mode == WRITE else "ToRCURead"
        if mode == WRITE:
            leaks = {
                "NoUnlinked": "unlinked but never reclaimed",
                "NoFreeable": "freeable but never freed",
                "NoFresh": "allocated but never linked",
            }
            for gate, what in leaks.items():
                if not env_gate(env, gate):
                    bad = sorted(x for x, t in env.items() if not env_gate(TypeEnv({x: t}), gate))
                    raise CheckFailure(Diagnostic(
                        gate_rule, block.span,
                        f"{', '.join(bad)} {'is' if len(bad) == 1 else 'are'} {what} at the end of the block ({gate})",
                        env, self.thread))
        exit_env: dict[str, RcuType] = {}
        for x, t in env.items():
            if isinstance(t, (RcuItr, RcuItrBare)):
                self.escaped[x] = gate_rule
            else:
                exit_env[x] = t
        return TypeEnv(exit_env)

    def check_thread(self, p: Program, t: ThreadDecl) -> ThreadReport:
        self.thread = t.name
        self.escaped = {}
        env = TypeEnv({p.root_var: ROOT, **{name: DATA for name, _ in t.params}})
        try:
            for item in t.body:
                if isinstance(item, Block):
                    env = self.check_block(env, item)
                else:
                    env = self.check_stmt(env, item, OUTSIDE)
        except CheckFailure as e:
            return ThreadReport(t.name, False, e.diagnostic)
        return ThreadReport(t.name, True, None, env)


def site_list(p: Program) -> list[tuple[AssertSite, str]]:
    out = []
    for t in p.threads:
        for item in t.body:
            body = item.body if isinstance(item, Block) else item
            out.extend((s, t.name) for s in walk(body) if isinstance(s, AssertSite))
    return out


def check_program(p: Program, *, bound: int = 3) -> CheckReport:
    c = Checker(p.field_types, p.root_var, bound)
    reports = [c.check_thread(p, t) for t in p.threads]
    sites = [(s, name, c.sites.get(id(s))) for s, name in site_list(p)]
    return CheckReport(reports, sites, c.applied)


def check_atomic(env: TypeEnv, stmt: Stmt, mode: str = WRITE,
                 field_types: dict[str, str] | None = None, bound: int = 3) -> TypeEnv:
    """Transfer function of one atomic statement; raises CheckFailure."""
    return Checker(field_types, bound=bound).check_atomic(env, stmt, mode)


def check_stmt(env: TypeEnv, stmt: Stmt, mode: str = WRITE,
               field_types: dict[str, str] | None = None, bound: int = 3) -> TypeEnv:
    return Checker(field_types, bound=bound).check_stmt(env, stmt, mode)


def check_block(env0: TypeEnv, block: Block, field_types: dict[str, str] | None = None,
                bound: int = 3) -> TypeEnv:
    return Checker(field_types, bound=bound).check_block(env0, block)


# -- golden comparison ------------------------------------------------------------


@dataclass
class Mismatch:
    site: int
    var: str
    expected: str
    computed: str

    def __str__(self) -> str:
        return f"site {self.site}: {self.var}: expected {self.expected}, computed {self.computed}"

    def to_json(self) -> dict:
        return {"site": self.site, "var": self.var, "expected": self.expected,
                "computed": self.computed}


def read_golden(text: str) -> list[str]:
    out = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("$assert{") and line.endswith("}"):
            line = line[len("$assert{"):-1]
        out.append(line)
    return out


class SiteCountError(ValueError):
    pass


def annotate_diff(p: Program, golden: list[str] | None = None, *, bound: int = 3) -> list[Mismatch]:
    """Compare the computed environment at each ``$assert`` site against the golden text.

    Without ``golden`` the inline assertion text is used.  Only variables named
    by an assertion are compared; an assertion of ``undef`` matches a missing
    binding.
    """
    report = check_program(p, bound=bound)
    sites = report.sites
    expected = golden if golden is not None else [s.text for s, _, _ in sites]
    if len(expected) != len(sites):
        raise SiteCountError(f"golden has {len(expected)} assertions, program has {len(sites)} sites")
    out: list[Mismatch] = []
    for i, ((_, _, env), text) in enumerate(zip(sites, expected)):
        want = parse_env_partial(text)
        for var, t in want.items():
            got = env[var] if env is not None else None
            if got is None:
                out.append(Mismatch(i, var, str(t), "<site not reached>"))
            elif got != t:
                out.append(Mismatch(i, var, str(t), str(got)))
    return out
