"""RCU reference types, environments, subtyping and the block-exit gates.

Environments never store ``undef``: a missing binding is undefined, and
``TypeEnv.set(x, UNDEF)`` removes ``x``.  This keeps structural equality of
environments meaningful when comparing against asserted annotations.

Annotation syntax::

    env   := "{"? binding ("," binding)* "}"?
    binding := var ":" type
    type  := "rcuItr" [path fmap] | "rcuFresh" [fmap] | "unlinked" | "undef"
           | "freeable" | "rcuRoot" | "bool" | "data"
    fmap  := "{" [key "->" (var | "null") ("," key "->" (var | "null"))*] "}"
    key   := field ("|" field)*
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterator, Union

from .paths import (
    EMPTY,
    EPS,
    FieldMap,
    Path,
    fieldmap_subtype,
    instantiate,
    join_fieldmap,
    join_path,
    parse_path,
    path_subtype,
    reindex_path,
)


@dataclass(frozen=True)
class RcuItr:
    path: Path = EPS
    fmap: FieldMap = EMPTY

    def __str__(self) -> str:
        return f"rcuItr {self.path} {self.fmap}"


@dataclass(frozen=True)
class RcuItrBare:
    def __str__(self) -> str:
        return "rcuItr"


@dataclass(frozen=True)
class RcuFresh:
    fmap: FieldMap = EMPTY

    def __str__(self) -> str:
        return f"rcuFresh {self.fmap}"


@dataclass(frozen=True)
class Unlinked:
    def __str__(self) -> str:
        return "unlinked"


@dataclass(frozen=True)
class Undef:
    def __str__(self) -> str:
        return "undef"


@dataclass(frozen=True)
class Freeable:
    def __str__(self) -> str:
        return "freeable"


@dataclass(frozen=True)
class RcuRoot:
    def __str__(self) -> str:
        return "rcuRoot"


@dataclass(frozen=True)
class Bool:
    def __str__(self) -> str:
        return "bool"


@dataclass(frozen=True)
class Data:
    """A value read from a ``normal`` field or passed as a parameter."""

    def __str__(self) -> str:
        return "data"


RcuType = Union[RcuItr, RcuItrBare, RcuFresh, Unlinked, Undef, Freeable, RcuRoot, Bool, Data]

UNDEF = Undef()
UNLINKED = Unlinked()
FREEABLE = Freeable()
ROOT = RcuRoot()
BOOL = Bool()
DATA = Data()
BARE = RcuItrBare()

LINEAR = (Unlinked, Freeable, RcuFresh)
GATES = {"NoFresh": RcuFresh, "NoUnlinked": Unlinked, "NoFreeable": Freeable}


def droppable(t: RcuType) -> bool:
    """Can ``t`` be weakened all the way to undef?"""
    return isinstance(t, (RcuItr, RcuItrBare, Undef, Bool, Data))


def type_subtype(a: RcuType, b: RcuType) -> bool:
    if a == b:
        return True
    if isinstance(b, Undef):
        return isinstance(a, (RcuItr, RcuItrBare))
    if isinstance(a, RcuItr) and isinstance(b, RcuItr):
        return path_subtype(a.path, b.path) and fieldmap_subtype(a.fmap, b.fmap)
    return False


def join_type(a: RcuType, b: RcuType) -> RcuType | None:
    """A common supertype, or None when linear information would be lost."""
    if a == b:
        return a
    if isinstance(a, RcuItr) and isinstance(b, RcuItr):
        p = join_path(a.path, b.path)
        if p is None:
            return UNDEF
        return RcuItr(p, join_fieldmap(a.fmap, b.fmap))
    if droppable(a) and droppable(b):
        return UNDEF
    return None


class TypeEnv:
    """Immutable mapping from variables to types; absent means undef."""

    __slots__ = ("_b", "_hash")

    def __init__(self, bindings: dict[str, RcuType] | None = None):
        self._b = {k: v for k, v in (bindings or {}).items() if not isinstance(v, Undef)}
        self._hash: int | None = None

    def __getitem__(self, x: str) -> RcuType:
        return self._b.get(x, UNDEF)

    def get(self, x: str) -> RcuType:
        return self._b.get(x, UNDEF)

    def __contains__(self, x: str) -> bool:
        return x in self._b

    def __iter__(self) -> Iterator[str]:
        return iter(self._b)

    def __len__(self) -> int:
        return len(self._b)

    def items(self):
        return self._b.items()

    def set(self, x: str, t: RcuType) -> "TypeEnv":
        b = dict(self._b)
        b[x] = t
        return TypeEnv(b)

    def update(self, **changes: RcuType) -> "TypeEnv":
        b = dict(self._b)
        b.update(changes)
        return TypeEnv(b)

    def with_all(self, changes: dict[str, RcuType]) -> "TypeEnv":
        b = dict(self._b)
        b.update(changes)
        return TypeEnv(b)

    def without(self, *xs: str) -> "TypeEnv":
        return TypeEnv({k: v for k, v in self._b.items() if k not in xs})

    def __eq__(self, other: object) -> bool:
        return isinstance(other, TypeEnv) and self._b == other._b

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash(frozenset(self._b.items()))
        return self._hash

    def __repr__(self) -> str:
        return f"TypeEnv({self})"

    def __str__(self) -> str:
        return "{" + ", ".join(f"{k}: {v}" for k, v in sorted(self._b.items())) + "}"

    def referenced(self, exclude: tuple[str, ...] = ()) -> set[str]:
        """Variables named in the field maps of bindings outside ``exclude``."""
        out: set[str] = set()
        for x, t in self._b.items():
            if x in exclude:
                continue
            if isinstance(t, (RcuItr, RcuFresh)):
                out |= t.fmap.targets()
        return out

    def to_json(self) -> dict[str, str]:
        return {k: str(v) for k, v in sorted(self._b.items())}


def env_subtype(a: TypeEnv, b: TypeEnv) -> bool:
    for x in set(a) | set(b):
        ta, tb = a[x], b[x]
        if isinstance(tb, Undef):
            if not droppable(ta):
                return False
        elif not type_subtype(ta, tb):
            return False
    return True


def join_env(a: TypeEnv, b: TypeEnv) -> tuple[TypeEnv | None, str | None]:
    """Pointwise join.  On failure also returns the variable that blocked it."""
    out: dict[str, RcuType] = {}
    for x in sorted(set(a) | set(b)):
        j = join_type(a[x], b[x])
        if j is None:
            return None, x
        out[x] = j
    env = TypeEnv(out)
    # a field map may still name a variable that the join forgot
    live = set(env)
    cleaned = {}
    for x, t in env.items():
        if isinstance(t, RcuItr):
            fm = t.fmap
            for tgt in fm.targets() - live:
                fm = fm.without_target(tgt)
            t = RcuItr(t.path, fm)
        cleaned[x] = t
    return TypeEnv(cleaned), None


def env_reindex(g: TypeEnv, k: str, f: str) -> TypeEnv:
    return TypeEnv({
        x: RcuItr(reindex_path(t.path, k, f), t.fmap) if isinstance(t, RcuItr) else t
        for x, t in g.items()
    })


def env_instantiate(g: TypeEnv, k: str, n: int) -> TypeEnv:
    return TypeEnv({
        x: RcuItr(instantiate(t.path, k, n), t.fmap) if isinstance(t, RcuItr) else t
        for x, t in g.items()
    })


def env_gate(g: TypeEnv, which: str) -> bool:
    ctor = GATES[which]
    return not any(isinstance(t, ctor) for _, t in g.items())


def env_indices(g: TypeEnv) -> set[str]:
    out: set[str] = set()
    for _, t in g.items():
        if isinstance(t, RcuItr):
            out |= t.path.indices()
    return out


# -- annotation parsing ------------------------------------------------------


class AnnotationError(ValueError):
    pass


def _split_top(text: str, sep: str = ",") -> list[str]:
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
        if ch == sep and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    tail = "".join(cur)
    if tail.strip():
        parts.append(tail)
    return parts


def parse_fieldmap(text: str) -> FieldMap:
    text = text.strip()
    if not (text.startswith("{") and text.endswith("}")):
        raise AnnotationError(f"field map must be braced: {text!r}")
    items: dict[str, str | None] = {}
    for part in _split_top(text[1:-1]):
        if "->" not in part:
            raise AnnotationError(f"field map entry needs '->': {part!r}")
        key, tgt = (s.strip() for s in part.split("->", 1))
        key = key.replace("(", "").replace(")", "").replace(" ", "")
        items[key] = None if tgt == "null" else tgt
    try:
        return FieldMap.of(items)
    except ValueError as e:
        raise AnnotationError(str(e)) from e


def parse_type(text: str) -> RcuType:
    text = text.strip()
    simple = {"unlinked": UNLINKED, "undef": UNDEF, "freeable": FREEABLE,
              "rcuRoot": ROOT, "bool": BOOL, "data": DATA}
    if text in simple:
        return simple[text]
    m = re.match(r"rcuFresh\b(.*)$", text, re.S)
    if m:
        rest = m.group(1).strip()
        return RcuFresh(parse_fieldmap(rest) if rest else EMPTY)
    m = re.match(r"rcuItr\b(.*)$", text, re.S)
    if m:
        rest = m.group(1).strip()
        if not rest:
            return BARE
        brace = rest.find("{")
        path_txt, fm_txt = (rest, "") if brace < 0 else (rest[:brace], rest[brace:])
        try:
            path = parse_path(path_txt)
        except ValueError as e:
            raise AnnotationError(str(e)) from e
        return RcuItr(path, parse_fieldmap(fm_txt) if fm_txt else EMPTY)
    raise AnnotationError(f"unknown type {text!r}")


def parse_env(text: str) -> TypeEnv:
    """Parse ``x: T, y: T`` (optionally wrapped in braces).  Undef bindings vanish."""
    text = text.strip()
    if text.startswith("{") and text.endswith("}") and _balanced_outer(text):
        text = text[1:-1]
    out: dict[str, RcuType] = {}
    for part in _split_top(text):
        if ":" not in part:
            raise AnnotationError(f"binding needs ':': {part!r}")
        name, ty = part.split(":", 1)
        name = name.strip()
        if name in out:
            raise AnnotationError(f"duplicate binding for {name!r}")
        out[name] = parse_type(ty)
    return TypeEnv(out)


def parse_env_partial(text: str) -> dict[str, RcuType]:
    """Like parse_env but keeps undef bindings (used for assertions)."""
    text = text.strip()
    if text.startswith("{") and text.endswith("}") and _balanced_outer(text):
        text = text[1:-1]
    out: dict[str, RcuType] = {}
    for part in _split_top(text):
        if ":" not in part:
            raise AnnotationError(f"binding needs ':': {part!r}")
        name, ty = part.split(":", 1)
        out[name.strip()] = parse_type(ty)
    return out


def _balanced_outer(text: str) -> bool:
    depth = 0
    for i, ch in enumerate(text):
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0 and i != len(text) - 1:
                return False
    return True
