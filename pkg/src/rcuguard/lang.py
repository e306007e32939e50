"""Source language for RCU client programs.

A program declares its field kinds, names the root variable and lists the
threads.  Each thread body is a sequence of critical-section blocks
(``rcu_write { ... }`` / ``rcu_read { ... }``), optionally interleaved with
plain statements that run outside any block.

    fields { Next: rcu; data: normal; }
    root head;

    writer remove(toDel = 1) {
      rcu_write {
        par = head;
        cur = par.Next;
        while (cur.Next != null && cur.data != toDel)
          @invariant{ par: rcuItr (Next)^k {Next -> cur}, cur: rcuItr (Next)^k.Next {} }
          @reindex(k, Next)
        { par = cur; cur = par.Next; }
        ...
      }
    }

Guards that test a ``normal`` field are hoisted into a boolean flag computed
before the test and again at the end of each loop iteration, so the checker
only ever sees shape tests and plain boolean variables.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterator, Union

NULL = "null"
DATA_OPS = ("==", "!=", "<", ">")


@dataclass(frozen=True)
class Span:
    line: int
    col: int

    def __str__(self) -> str:
        return f"{self.line}:{self.col}"


NOWHERE = Span(0, 0)


def _span() -> Span:
    return field(default=NOWHERE, compare=False, repr=False)


# -- statements --------------------------------------------------------------


@dataclass(frozen=True)
class RootRead:
    y: str
    r: str
    span: Span = _span()


@dataclass(frozen=True)
class VarRead:
    z: str
    x: str
    span: Span = _span()


@dataclass(frozen=True)
class FieldRead:
    z: str
    x: str
    f: str
    span: Span = _span()


@dataclass(frozen=True)
class FieldWrite:
    """``x.f = y`` on an rcu field; ``y`` may be the literal ``null``."""

    x: str
    f: str
    y: str
    span: Span = _span()


@dataclass(frozen=True)
class Alloc:
    x: str
    span: Span = _span()


@dataclass(frozen=True)
class FreeStmt:
    x: str
    span: Span = _span()


@dataclass(frozen=True)
class SyncStart:
    span: Span = _span()


@dataclass(frozen=True)
class SyncStop:
    span: Span = _span()


@dataclass(frozen=True)
class Skip:
    span: Span = _span()


@dataclass(frozen=True)
class Seq:
    s1: "Stmt"
    s2: "Stmt"
    span: Span = _span()


@dataclass(frozen=True)
class IfBool:
    x: str
    s1: "Stmt"
    s2: "Stmt"
    span: Span = _span()


@dataclass(frozen=True)
class IfFieldEq:
    x: str
    f1: str
    z: str
    s1: "Stmt"
    s2: "Stmt"
    span: Span = _span()


@dataclass(frozen=True)
class IfFieldNull:
    x: str
    f: str
    s1: "Stmt"
    s2: "Stmt"
    span: Span = _span()


@dataclass(frozen=True)
class LoopAnnotation:
    invariant: str
    reindex: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class WhileBool:
    x: str
    body: "Stmt"
    annot: LoopAnnotation | None = None
    span: Span = _span()


@dataclass(frozen=True)
class WhileFieldNonNull:
    """``while (x.f != null [&& flag])``.

    When ``flag`` is set the loop may also leave because the flag went false,
    so nothing can be concluded about ``x.f`` at the exit.
    """

    x: str
    f: str
    body: "Stmt"
    annot: LoopAnnotation | None = None
    flag: str | None = None
    span: Span = _span()


@dataclass(frozen=True)
class DataRead:
    v: str
    x: str
    f: str = "data"
    span: Span = _span()


@dataclass(frozen=True)
class DataWrite:
    x: str
    v: str | int
    f: str = "data"
    span: Span = _span()


@dataclass(frozen=True)
class DataTest:
    """``b = x.f OP v`` where ``f`` is a normal field."""

    b: str
    x: str
    op: str
    v: str | int
    f: str = "data"
    span: Span = _span()


@dataclass(frozen=True)
class AssertSite:
    """An ``$assert{...}`` marker; carries the expected environment text."""

    text: str
    span: Span = _span()


Stmt = Union[
    RootRead, VarRead, FieldRead, FieldWrite, Alloc, FreeStmt, SyncStart,
    SyncStop, Skip, Seq, IfBool, IfFieldEq, IfFieldNull, WhileBool,
    WhileFieldNonNull, DataRead, DataWrite, DataTest, AssertSite,
]

ATOMIC = (RootRead, VarRead, FieldRead, FieldWrite, Alloc, FreeStmt, SyncStart,
          SyncStop, Skip, DataRead, DataWrite, DataTest, AssertSite)


@dataclass(frozen=True)
class Block:
    mode: str  # "write" | "read"
    body: Stmt
    span: Span = _span()


@dataclass(frozen=True)
class ThreadDecl:
    name: str
    kind: str  # "writer" | "reader"
    body: tuple[Block | Stmt, ...]
    params: tuple[tuple[str, int], ...] = ()
    replicas: int = 1
    span: Span = _span()

    @property
    def blocks(self) -> list[Block]:
        return [b for b in self.body if isinstance(b, Block)]


@dataclass(frozen=True)
class Program:
    field_types: dict[str, str]
    threads: tuple[ThreadDecl, ...]
    root_var: str

    def rcu_fields(self) -> list[str]:
        return sorted(f for f, k in self.field_types.items() if k == "rcu")

    def thread(self, name: str) -> ThreadDecl:
        for t in self.threads:
            if t.name == name:
                return t
        raise KeyError(name)


def seq(*stmts: Stmt) -> Stmt:
    """Right-nested sequence; an empty sequence is ``Skip``."""
    items = [s for s in stmts]
    if not items:
        return Skip()
    out = items[-1]
    for s in reversed(items[:-1]):
        out = Seq(s, out)
    return out


def flatten(stmt: Stmt) -> list[Stmt]:
    if isinstance(stmt, Seq):
        return flatten(stmt.s1) + flatten(stmt.s2)
    return [stmt]


def walk(stmt: Stmt) -> Iterator[Stmt]:
    yield stmt
    match stmt:
        case Seq(s1=a, s2=b) | IfBool(s1=a, s2=b) | IfFieldEq(s1=a, s2=b) | IfFieldNull(s1=a, s2=b):
            yield from walk(a)
            yield from walk(b)
        case WhileBool(body=body) | WhileFieldNonNull(body=body):
            yield from walk(body)


def free_vars(stmt: Stmt) -> set[str]:
    """Variables read or written by ``stmt``."""
    match stmt:
        case RootRead(y=y, r=r):
            return {y, r}
        case VarRead(z=z, x=x):
            return {z, x}
        case FieldRead(z=z, x=x):
            return {z, x}
        case FieldWrite(x=x, y=y):
            return {x} if y == NULL else {x, y}
        case Alloc(x=x) | FreeStmt(x=x):
            return {x}
        case DataRead(v=v, x=x):
            return {v, x}
        case DataWrite(x=x, v=v):
            return {x, v} if isinstance(v, str) else {x}
        case DataTest(b=b, x=x, v=v):
            return {b, x, v} if isinstance(v, str) else {b, x}
        case Seq(s1=a, s2=b):
            return free_vars(a) | free_vars(b)
        case IfBool(x=x, s1=a, s2=b):
            return {x} | free_vars(a) | free_vars(b)
        case IfFieldEq(x=x, z=z, s1=a, s2=b):
            return {x, z} | free_vars(a) | free_vars(b)
        case IfFieldNull(x=x, s1=a, s2=b):
            return {x} | free_vars(a) | free_vars(b)
        case WhileBool(x=x, body=body):
            return {x} | free_vars(body)
        case WhileFieldNonNull(x=x, body=body, flag=flag):
            return {x} | free_vars(body) | ({flag} if flag else set())
    return set()


# -- lexer -------------------------------------------------------------------


class ParseError(Exception):
    def __init__(self, line: int, col: int, message: str):
        super().__init__(f"{line}:{col}: {message}")
        self.line = line
        self.col = col
        self.message = message

    @property
    def diagnostics(self) -> list[dict]:
        return [{"line": self.line, "col": self.col, "message": self.message}]


@dataclass(frozen=True)
class Tok:
    kind: str  # ident, int, sym, raw, eof
    text: str
    line: int
    col: int


_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>//[^\n]*|\#[^\n]*)
  | (?P<annot>[@$][A-Za-z_]+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<int>-?[0-9]+)
  | (?P<sym>==|!=|&&|->|[{}();.=<>|,*^:])
""", re.VERBOSE)

# ``fields``, ``root``, ``writer``, ``reader``, ``rcu`` and ``normal`` are only
# special at the top level, so they stay usable as variable names.
KEYWORDS = {"rcu_write", "rcu_read", "if", "else", "while", "new", "null", "skip",
            "SyncStart", "SyncStop", "Free"}


def _position(src: str, pos: int) -> tuple[int, int]:
    line = src.count("\n", 0, pos) + 1
    col = pos - (src.rfind("\n", 0, pos) + 1) + 1
    return line, col


def tokenize(src: str) -> list[Tok]:
    toks: list[Tok] = []
    pos = 0
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        if not m:
            line, col = _position(src, pos)
            raise ParseError(line, col, f"unexpected character {src[pos]!r}")
        kind = m.lastgroup
        line, col = _position(src, pos)
        if kind == "annot":
            toks.append(Tok("annot", m.group(), line, col))
            pos = m.end()
            if m.group() in ("$assert", "@invariant"):
                raw, pos = _braced(src, pos)
                toks.append(Tok("raw", raw, line, col))
            continue
        if kind not in ("ws", "comment"):
            toks.append(Tok(kind, m.group(), line, col))
        pos = m.end()
    line, col = _position(src, len(src))
    toks.append(Tok("eof", "", line, col))
    return toks


def _braced(src: str, pos: int) -> tuple[str, int]:
    while pos < len(src) and src[pos] in " \t":
        pos += 1
    if pos >= len(src) or src[pos] != "{":
        line, col = _position(src, pos)
        raise ParseError(line, col, "expected '{' after annotation keyword")
    depth = 0
    start = pos
    while pos < len(src):
        ch = src[pos]
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                inner = src[start + 1:pos]
                return " ".join(inner.split()), pos + 1
        pos += 1
    line, col = _position(src, start)
    raise ParseError(line, col, "unterminated annotation")


# -- parser ------------------------------------------------------------------


class _Parser:
    def __init__(self, src: str, require_invariants: bool):
        self.toks = tokenize(src)
        self.i = 0
        self.require_invariants = require_invariants
        self.fields: dict[str, str] = {}
        self.root: str | None = None
        self.used_names = {t.text for t in self.toks if t.kind == "ident"}
        self.flag_counter = 0
        self.block_mode: str | None = None

    # token helpers
    @property
    def tok(self) -> Tok:
        return self.toks[self.i]

    def error(self, msg: str, tok: Tok | None = None) -> ParseError:
        t = tok or self.tok
        return ParseError(t.line, t.col, msg)

    def at(self, text: str) -> bool:
        return self.tok.text == text and self.tok.kind in ("sym", "ident", "annot")

    def eat(self, text: str) -> Tok:
        if not self.at(text):
            shown = self.tok.text or "end of input"
            raise self.error(f"expected {text!r}, found {shown!r}")
        t = self.tok
        self.i += 1
        return t

    def ident(self, what: str = "identifier") -> str:
        t = self.tok
        if t.kind != "ident" or t.text in KEYWORDS:
            shown = t.text or "end of input"
            raise self.error(f"expected {what}, found {shown!r}")
        self.i += 1
        return t.text

    def fresh_flag(self) -> str:
        while True:
            self.flag_counter += 1
            name = f"go{self.flag_counter}_"
            if name not in self.used_names:
                self.used_names.add(name)
                return name

    # program structure
    def program(self) -> Program:
        while self.at("fields") or self.at("root"):
            if self.at("fields"):
                self.field_decls()
            else:
                self.eat("root")
                if self.root is not None:
                    raise self.error("root variable declared twice")
                self.root = self.ident("root variable")
                self.eat(";")
        if self.root is None:
            raise self.error("missing 'root <name>;' declaration")
        if not self.fields:
            raise self.error("missing 'fields { ... }' declaration")
        threads: list[ThreadDecl] = []
        seen: set[str] = set()
        while self.tok.kind != "eof":
            t = self.thread()
            if t.name in seen:
                raise ParseError(t.span.line, t.span.col, f"duplicate thread name {t.name!r}")
            seen.add(t.name)
            threads.append(t)
        writers = [t for t in threads if t.kind == "writer"]
        if len(writers) > 1:
            w = writers[1]
            raise ParseError(w.span.line, w.span.col, "at most one writer thread is allowed")
        return Program(dict(self.fields), tuple(threads), self.root)

    def field_decls(self) -> None:
        self.eat("fields")
        self.eat("{")
        while not self.at("}"):
            if self.tok.kind == "eof":
                raise self.error("unterminated fields block")
            name = self.ident("field name")
            self.eat(":")
            kind = self.tok.text
            if kind not in ("rcu", "normal"):
                raise self.error("field kind must be 'rcu' or 'normal'")
            self.i += 1
            if name in self.fields and self.fields[name] != kind:
                raise self.error(f"field {name!r} redeclared with a different kind")
            self.fields[name] = kind
            if not self.at("}"):
                self.eat(";")
        self.eat("}")

    def thread(self) -> ThreadDecl:
        start = self.tok
        if self.tok.text not in ("writer", "reader"):
            raise self.error(f"unknown keyword {self.tok.text!r}; expected 'writer' or 'reader'")
        kind = self.tok.text
        self.i += 1
        name = self.ident("thread name")
        params: list[tuple[str, int]] = []
        if self.at("("):
            self.eat("(")
            while not self.at(")"):
                pname = self.ident("parameter name")
                self.eat("=")
                if self.tok.kind != "int":
                    raise self.error("parameter default must be an integer")
                params.append((pname, int(self.tok.text)))
                self.i += 1
                if not self.at(")"):
                    self.eat(",")
            self.eat(")")
        replicas = 1
        if self.at("*"):
            self.eat("*")
            if self.tok.kind != "int" or int(self.tok.text) < 1:
                raise self.error("replica count must be a positive integer")
            replicas = int(self.tok.text)
            self.i += 1
            if kind == "writer" and replicas != 1:
                raise self.error("writer threads cannot be replicated")
        self.eat("{")
        items: list[Block | Stmt] = []
        want = "rcu_write" if kind == "writer" else "rcu_read"
        while not self.at("}"):
            if self.tok.kind == "eof":
                raise self.error(f"unterminated thread {name!r}", start)
            if self.at("rcu_write") or self.at("rcu_read"):
                if self.tok.text != want:
                    raise self.error(f"{kind} threads may only contain {want} blocks")
                btok = self.tok
                self.i += 1
                self.block_mode = "write" if want == "rcu_write" else "read"
                body = self.block()
                self.block_mode = None
                items.append(Block(self.block_mode_of(want), body, Span(btok.line, btok.col)))
            else:
                items.extend(flatten(self.stmt()))
        self.eat("}")
        body = tuple(i for i in items if not isinstance(i, Skip)) or (Skip(),)
        return ThreadDecl(name, kind, body, tuple(params), replicas, Span(start.line, start.col))

    @staticmethod
    def block_mode_of(kw: str) -> str:
        return "write" if kw == "rcu_write" else "read"

    def block(self) -> Stmt:
        open_tok = self.eat("{")
        stmts: list[Stmt] = []
        while not self.at("}"):
            if self.tok.kind == "eof":
                raise self.error("unterminated block", open_tok)
            stmts.extend(flatten(self.stmt()))
        self.eat("}")
        stmts = [s for s in stmts if not isinstance(s, Skip)]
        return seq(*stmts)

    # statements
    def stmt(self) -> Stmt:
        t = self.tok
        sp = Span(t.line, t.col)
        if t.kind == "annot":
            if t.text != "$assert":
                raise self.error(f"annotation {t.text} is only allowed after a while guard")
            self.i += 1
            raw = self.tok.text
            self.i += 1
            return AssertSite(raw, sp)
        if t.kind == "sym" and t.text == "{":
            return self.block()
        if t.kind != "ident":
            raise self.error(f"expected a statement, found {t.text or 'end of input'!r}")
        if t.text == "if":
            return self.if_stmt()
        if t.text == "while":
            return self.while_stmt()
        if t.text == "skip":
            self.i += 1
            self.eat(";")
            return Skip(sp)
        if t.text in ("SyncStart", "SyncStop"):
            self.i += 1
            self.eat(";")
            return SyncStart(sp) if t.text == "SyncStart" else SyncStop(sp)
        if t.text == "Free":
            self.i += 1
            self.eat("(")
            x = self.ident()
            self.eat(")")
            self.eat(";")
            return FreeStmt(x, sp)
        if t.text in KEYWORDS:
            raise self.error(f"unexpected keyword {t.text!r}")
        nxt = self.toks[self.i + 1]
        if nxt.text not in ("=", "."):
            raise self.error(f"unknown keyword {t.text!r}")
        lhs = self.ident()
        if self.at("."):
            self.eat(".")
            f = self.field_name()
            self.eat("=")
            rhs = self.tok
            if rhs.kind == "int":
                self.i += 1
                value: str | int = int(rhs.text)
            elif rhs.kind == "ident" and (rhs.text == NULL or rhs.text not in KEYWORDS):
                self.i += 1
                value = rhs.text
            else:
                raise self.error("expected a variable, 'null' or an integer on the right-hand side")
            self.eat(";")
            self.no_root_write(lhs, t)
            if self.fields[f] == "rcu":
                if not isinstance(value, str):
                    raise self.error(f"cannot store an integer in rcu field {f!r}", rhs)
                return FieldWrite(lhs, f, value, sp)
            if value == NULL:
                raise self.error(f"cannot store null in normal field {f!r}", rhs)
            return DataWrite(lhs, value, f, sp)
        self.eat("=")
        self.no_root_write(lhs, t)
        if self.at("new"):
            self.eat("new")
            self.eat(";")
            return Alloc(lhs, sp)
        src = self.ident("variable")
        if self.at("."):
            self.eat(".")
            f = self.field_name()
            if self.tok.text in DATA_OPS and self.tok.kind == "sym":
                if self.fields[f] != "normal":
                    raise self.error(f"comparison on rcu field {f!r} is not supported")
                op = self.tok.text
                self.i += 1
                operand = self.operand()
                self.eat(";")
                return DataTest(lhs, src, op, operand, f, sp)
            self.eat(";")
            if self.fields[f] == "rcu":
                return FieldRead(lhs, src, f, sp)
            return DataRead(lhs, src, f, sp)
        self.eat(";")
        if src == self.root:
            return RootRead(lhs, src, sp)
        return VarRead(lhs, src, sp)

    def no_root_write(self, name: str, tok: Tok) -> None:
        if name == self.root:
            raise self.error("the root variable cannot be assigned", tok)

    def field_name(self) -> str:
        t = self.tok
        name = self.ident("field name")
        if name not in self.fields:
            raise self.error(f"unknown field {name!r}", t)
        return name

    def operand(self) -> str | int:
        t = self.tok
        if t.kind == "int":
            self.i += 1
            return int(t.text)
        return self.ident("variable or integer")

    # guards: each atom is ("shape", x, f, negated) | ("eq", x, f, z, negated)
    # | ("bool", b) | ("data", x, f, op, v)
    def atom(self) -> tuple:
        x = self.ident("variable")
        if not self.at("."):
            return ("bool", x)
        self.eat(".")
        f = self.field_name()
        op_tok = self.tok
        if op_tok.text not in DATA_OPS:
            raise self.error("expected a comparison operator")
        self.i += 1
        if self.fields[f] == "normal":
            return ("data", x, f, op_tok.text, self.operand())
        if op_tok.text not in ("==", "!="):
            raise self.error("rcu fields only support '==' and '!='", op_tok)
        rhs = self.ident("variable or 'null'") if self.tok.text != NULL else self.eat(NULL).text
        negated = op_tok.text == "!="
        if rhs == NULL:
            return ("null", x, f, negated)
        return ("eq", x, f, rhs, negated)

    def guard(self) -> list[tuple]:
        self.eat("(")
        atoms = [self.atom()]
        while self.at("&&"):
            self.eat("&&")
            atoms.append(self.atom())
        self.eat(")")
        return atoms

    def if_stmt(self) -> Stmt:
        t = self.eat("if")
        sp = Span(t.line, t.col)
        atoms = self.guard()
        if len(atoms) != 1:
            raise self.error("conditional guards take a single test", t)
        then = self.stmt_as_block()
        els: Stmt = Skip()
        if self.at("else"):
            self.eat("else")
            els = self.if_stmt() if self.at("if") else self.stmt_as_block()
        a = atoms[0]
        match a:
            case ("bool", b):
                return IfBool(b, then, els, sp)
            case ("null", x, f, negated):
                if negated:
                    then, els = els, then
                return IfFieldNull(x, f, then, els, sp)
            case ("eq", x, f, z, negated):
                if negated:
                    then, els = els, then
                return IfFieldEq(x, f, z, then, els, sp)
            case ("data", x, f, op, v):
                flag = self.fresh_flag()
                return seq(DataTest(flag, x, op, v, f, sp), IfBool(flag, then, els, sp))
        raise self.error("unsupported guard", t)

    def stmt_as_block(self) -> Stmt:
        if not self.at("{"):
            raise self.error("expected '{'")
        return self.block()

    def while_stmt(self) -> Stmt:
        t = self.eat("while")
        sp = Span(t.line, t.col)
        atoms = self.guard()
        annot = self.loop_annotation()
        body = self.stmt_as_block()
        shapes = [a for a in atoms if a[0] == "null"]
        others = [a for a in atoms if a[0] != "null"]
        if any(a[0] == "null" and not a[3] for a in shapes):
            raise self.error("loop shape guards must have the form x.f != null", t)
        if any(a[0] == "eq" for a in others):
            raise self.error("loop guards cannot compare rcu fields against variables", t)
        if len(shapes) > 1 or len(others) > 1 or not atoms:
            raise self.error("loop guards combine at most one 'x.f != null' test and one other test", t)
        if self.require_invariants and annot is None and self.block_mode == "write":
            if any(isinstance(s, (FieldRead, RootRead)) for s in walk(body)):
                raise self.error("loop reading the heap needs an @invariant annotation", t)
        prefix: list[Stmt] = []
        flag: str | None = None
        if others:
            o = others[0]
            if o[0] == "bool":
                flag = o[1]
            else:
                _, x, f, op, v = o
                flag = self.fresh_flag()
                update = DataTest(flag, x, op, v, f, sp)
                prefix.append(update)
                body = seq(*(flatten(body) + [update])) if not isinstance(body, Skip) else update
        if shapes:
            _, x, f, _ = shapes[0]
            loop: Stmt = WhileFieldNonNull(x, f, body, annot, flag, sp)
        else:
            assert flag is not None
            loop = WhileBool(flag, body, annot, sp)
        return seq(*prefix, loop)

    def loop_annotation(self) -> LoopAnnotation | None:
        inv: str | None = None
        reindex: list[tuple[str, str]] = []
        while self.tok.kind == "annot":
            t = self.tok
            if t.text == "@invariant":
                self.i += 1
                inv = self.tok.text
                self.i += 1
            elif t.text == "@reindex":
                self.i += 1
                self.eat("(")
                k = self.ident("index variable")
                self.eat(",")
                fs = [self.field_name()]
                while self.at("|"):
                    self.eat("|")
                    fs.append(self.field_name())
                self.eat(")")
                reindex.append((k, "|".join(fs)))
            else:
                raise self.error(f"unknown loop annotation {t.text}")
        if inv is None and reindex:
            raise self.error("@reindex given without @invariant")
        if inv is None:
            return None
        for k, _ in reindex:
            if not re.search(rf"\^\s*{re.escape(k)}\b", inv):
                raise self.error(f"index variable {k!r} does not occur in the invariant")
        return LoopAnnotation(inv, tuple(reindex))


def parse(source: str, *, require_invariants: bool = False) -> Program:
    """Parse a program; raises ParseError with a line/column on failure."""
    return _Parser(source, require_invariants).program()


def parse_stmts(source: str, fields: dict[str, str], root: str = "head") -> Stmt:
    """Parse a bare statement list against a field table (testing helper)."""
    p = _Parser(source, False)
    p.fields = dict(fields)
    p.root = root
    stmts: list[Stmt] = []
    while p.tok.kind != "eof":
        stmts.extend(flatten(p.stmt()))
    return seq(*[s for s in stmts if not isinstance(s, Skip)])


# -- pretty printer ----------------------------------------------------------


def _operand(v: str | int) -> str:
    return str(v)


def pretty_stmt(stmt: Stmt, indent: int = 0) -> list[str]:
    pad = "  " * indent
    match stmt:
        case Seq():
            out: list[str] = []
            for s in flatten(stmt):
                out.extend(pretty_stmt(s, indent))
            return out
        case Skip():
            return [pad + "skip;"]
        case RootRead(y=y, r=r) | VarRead(z=y, x=r):
            return [f"{pad}{y} = {r};"]
        case FieldRead(z=z, x=x, f=f) | DataRead(v=z, x=x, f=f):
            return [f"{pad}{z} = {x}.{f};"]
        case FieldWrite(x=x, f=f, y=y):
            return [f"{pad}{x}.{f} = {y};"]
        case DataWrite(x=x, v=v, f=f):
            return [f"{pad}{x}.{f} = {_operand(v)};"]
        case DataTest(b=b, x=x, op=op, v=v, f=f):
            return [f"{pad}{b} = {x}.{f} {op} {_operand(v)};"]
        case Alloc(x=x):
            return [f"{pad}{x} = new;"]
        case FreeStmt(x=x):
            return [f"{pad}Free({x});"]
        case SyncStart():
            return [pad + "SyncStart;"]
        case SyncStop():
            return [pad + "SyncStop;"]
        case AssertSite(text=text):
            return [f"{pad}$assert{{{text}}}"]
        case IfBool(x=x, s1=a, s2=b):
            return _pretty_if(f"if ({x})", a, b, indent)
        case IfFieldEq(x=x, f1=f, z=z, s1=a, s2=b):
            return _pretty_if(f"if ({x}.{f} == {z})", a, b, indent)
        case IfFieldNull(x=x, f=f, s1=a, s2=b):
            return _pretty_if(f"if ({x}.{f} == null)", a, b, indent)
        case WhileBool(x=x, body=body, annot=annot):
            return _pretty_loop(f"while ({x})", annot, body, indent)
        case WhileFieldNonNull(x=x, f=f, body=body, annot=annot, flag=flag):
            guard = f"{x}.{f} != null" + (f" && {flag}" if flag else "")
            return _pretty_loop(f"while ({guard})", annot, body, indent)
    raise TypeError(f"not a statement: {stmt!r}")


def _body(stmt: Stmt, indent: int) -> list[str]:
    if isinstance(stmt, Skip):
        return []
    return pretty_stmt(stmt, indent)


def _pretty_if(head: str, a: Stmt, b: Stmt, indent: int) -> list[str]:
    pad = "  " * indent
    out = [f"{pad}{head} {{"] + _body(a, indent + 1)
    if isinstance(b, Skip):
        out.append(pad + "}")
    else:
        out.append(pad + "} else {")
        out.extend(_body(b, indent + 1))
        out.append(pad + "}")
    return out


def _pretty_loop(head: str, annot: LoopAnnotation | None, body: Stmt, indent: int) -> list[str]:
    pad = "  " * indent
    out = [pad + head]
    if annot is not None:
        out.append(f"{pad}  @invariant{{{annot.invariant}}}")
        for k, f in annot.reindex:
            out.append(f"{pad}  @reindex({k}, {f})")
    out.append(pad + "{")
    out.extend(_body(body, indent + 1))
    out.append(pad + "}")
    return out


def pretty(program: Program) -> str:
    lines = ["fields {"]
    for name, kind in program.field_types.items():
        lines.append(f"  {name}: {kind};")
    lines.append("}")
    lines.append(f"root {program.root_var};")
    for t in program.threads:
        lines.append("")
        head = f"{t.kind} {t.name}"
        if t.params:
            head += "(" + ", ".join(f"{n} = {v}" for n, v in t.params) + ")"
        if t.replicas != 1:
            head += f" * {t.replicas}"
        lines.append(head + " {")
        for item in t.body:
            if isinstance(item, Block):
                kw = "rcu_write" if item.mode == "write" else "rcu_read"
                lines.append(f"  {kw} {{")
                lines.extend(_body(item.body, 2))
                lines.append("  }")
            else:
                lines.extend(pretty_stmt(item, 1))
        lines.append("}")
    return "\n".join(lines) + "\n"
