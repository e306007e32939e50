"""Abstract root-to-node paths and field maps.

A path is a sequence of segments.  ``Concrete("Next")`` is a single field
step, ``Alt({"Left", "Right"})`` is one step along either field, and
``Rep({"Next"}, "k")`` is ``k`` steps each drawn from the field set.  An index
variable denotes one natural number throughout an environment.

Textual syntax, as used in annotations::

    path    := "eps" | seg ("." seg)*
    seg     := atom ["^" index]
    atom    := field ("|" field)* | "(" field ("|" field)* ")"

``may_alias`` is conservative: it answers ``False`` only when the two paths
cannot denote the same concrete field sequence under any choice of index
values.  It combines bounded enumeration with two unbounded arguments (a
length equation over the index variables and a fixed-position letter clash).
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Union


@dataclass(frozen=True)
class Concrete:
    field: str

    @property
    def fields(self) -> frozenset[str]:
        return frozenset((self.field,))

    def __str__(self) -> str:
        return self.field


@dataclass(frozen=True)
class Alt:
    fields: frozenset[str]

    def __post_init__(self) -> None:
        if len(self.fields) < 2:
            raise ValueError("an Alt segment needs at least two fields")

    def __str__(self) -> str:
        return "(" + "|".join(sorted(self.fields)) + ")"


@dataclass(frozen=True)
class Rep:
    fields: frozenset[str]
    index: str

    def __post_init__(self) -> None:
        if not self.fields:
            raise ValueError("a Rep segment needs at least one field")

    def __str__(self) -> str:
        return "(" + "|".join(sorted(self.fields)) + ")^" + self.index


PathSeg = Union[Concrete, Alt, Rep]


def step(fields: Iterable[str]) -> PathSeg:
    """One non-repeating step over ``fields``."""
    fs = frozenset(fields)
    if len(fs) == 1:
        return Concrete(next(iter(fs)))
    return Alt(fs)


@dataclass(frozen=True)
class Path:
    segs: tuple[PathSeg, ...] = ()

    def __post_init__(self) -> None:
        for a, b in zip(self.segs, self.segs[1:]):
            if isinstance(a, Rep) and isinstance(b, Rep) and a.index == b.index:
                raise ValueError(f"adjacent repetitions share index {a.index!r}")

    def __str__(self) -> str:
        return ".".join(str(s) for s in self.segs) if self.segs else "eps"

    def __len__(self) -> int:
        return len(self.segs)

    def dot(self, *segs: PathSeg | str) -> "Path":
        more = tuple(Concrete(s) if isinstance(s, str) else s for s in segs)
        return Path(self.segs + more)

    def indices(self) -> set[str]:
        return {s.index for s in self.segs if isinstance(s, Rep)}

    def starts_with(self, prefix: "Path") -> bool:
        return self.segs[: len(prefix.segs)] == prefix.segs


EPS = Path()


# -- field maps --------------------------------------------------------------


@dataclass(frozen=True)
class FieldMap:
    """Field keys (a frozenset of one or more fields) to a variable or ``None`` (null)."""

    entries: frozenset[tuple[frozenset[str], str | None]] = frozenset()

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for key, _ in self.entries:
            if not key:
                raise ValueError("empty field key")
            if seen & key:
                raise ValueError("field map keys overlap")
            seen |= key

    @staticmethod
    def of(mapping: dict) -> "FieldMap":
        """Build from ``{"Next": "cur", "Left|Right": None}``-style dicts."""
        items = []
        for k, v in mapping.items():
            key = frozenset(k.split("|")) if isinstance(k, str) else frozenset(k)
            items.append((key, v))
        return FieldMap(frozenset(items))

    def lookup(self, f: str) -> tuple[bool, str | None]:
        """Exact single-field lookup: ``(True, target)`` only for a key ``{f}``."""
        for key, tgt in self.entries:
            if key == frozenset((f,)):
                return True, tgt
        return False, None

    def key_of_target(self, target: str) -> frozenset[str] | None:
        for key, tgt in self.entries:
            if tgt == target:
                return key
        return None

    def targets(self) -> set[str]:
        return {t for _, t in self.entries if t is not None}

    def set(self, f: str, target: str | None) -> "FieldMap":
        """``N[f -> target]``; any key overlapping ``f`` is dropped first."""
        kept = {(k, t) for k, t in self.entries if f not in k}
        return FieldMap(frozenset(kept | {(frozenset((f,)), target)}))

    def rekey(self, old: frozenset[str], new: frozenset[str]) -> "FieldMap":
        items = {(new if k == old else k, t) for k, t in self.entries}
        return FieldMap(frozenset(items))

    def without_target(self, target: str) -> "FieldMap":
        return FieldMap(frozenset((k, t) for k, t in self.entries if t != target))

    def only_null(self) -> bool:
        return all(t is None for _, t in self.entries)

    def __str__(self) -> str:
        parts = sorted(
            f"{'|'.join(sorted(k))} -> {t if t is not None else 'null'}" for k, t in self.entries
        )
        return "{" + ", ".join(parts) + "}"

    def __len__(self) -> int:
        return len(self.entries)


EMPTY = FieldMap()


# -- textual syntax ----------------------------------------------------------


_PATH_TOKEN = re.compile(r"\s*(?:(?P<ident>[A-Za-z_][A-Za-z0-9_]*)|(?P<sym>[().|^]))")


def parse_path(text: str) -> Path:
    text = text.strip()
    if text in ("eps", "ε", ""):
        return EPS
    toks: list[str] = []
    pos = 0
    while pos < len(text):
        m = _PATH_TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ValueError(f"bad path syntax near {text[pos:]!r}")
        toks.append(m.group("ident") or m.group("sym"))
        pos = m.end()
        while pos < len(text) and text[pos].isspace():
            pos += 1
    segs: list[PathSeg] = []
    i = 0

    def fieldset() -> list[str]:
        nonlocal i
        names = [toks[i]]
        i += 1
        while i < len(toks) and toks[i] == "|":
            names.append(toks[i + 1])
            i += 2
        return names

    while i < len(toks):
        if toks[i] == "(":
            i += 1
            names = fieldset()
            if i >= len(toks) or toks[i] != ")":
                raise ValueError(f"unbalanced parenthesis in path {text!r}")
            i += 1
        elif toks[i] in ".|^)":
            raise ValueError(f"bad path syntax in {text!r}")
        else:
            names = fieldset()
        if i < len(toks) and toks[i] == "^":
            segs.append(Rep(frozenset(names), toks[i + 1]))
            i += 2
        else:
            segs.append(step(names))
        if i < len(toks):
            if toks[i] != ".":
                raise ValueError(f"expected '.' in path {text!r}")
            i += 1
    return Path(tuple(segs))


# -- concretization ----------------------------------------------------------


class Concretization(NamedTuple):
    seqs: frozenset[tuple[str, ...]]
    overflow: bool


def concretize(path: Path, assignment: dict[str, int], depth: int = 8) -> Concretization:
    """Every field sequence the path denotes under ``assignment``, up to ``depth``."""
    choices: list[list[str]] = []
    for seg in path.segs:
        if isinstance(seg, Rep):
            if seg.index not in assignment:
                raise KeyError(f"no value for index variable {seg.index!r}")
            n = assignment[seg.index]
            choices.extend([sorted(seg.fields)] * n)
        else:
            choices.append(sorted(seg.fields))
    if len(choices) > depth:
        return Concretization(frozenset(), True)
    return Concretization(frozenset(itertools.product(*choices)), False)


# -- subtyping ---------------------------------------------------------------


def seg_subtype(a: PathSeg, b: PathSeg) -> bool:
    if a == b:
        return True
    if isinstance(a, Rep) or isinstance(b, Rep):
        return (isinstance(a, Rep) and isinstance(b, Rep) and a.index == b.index
                and a.fields <= b.fields)
    return isinstance(b, Alt) and a.fields <= b.fields


def path_subtype(a: Path, b: Path) -> bool:
    return len(a.segs) == len(b.segs) and all(seg_subtype(x, y) for x, y in zip(a.segs, b.segs))


def fieldmap_subtype(a: FieldMap, b: FieldMap) -> bool:
    """``b`` is ``a`` with some keys widened and some entries forgotten."""
    return all(
        any(ta == tb and ka <= kb for ka, ta in a.entries) for kb, tb in b.entries
    )


def join_seg(a: PathSeg, b: PathSeg) -> PathSeg | None:
    if a == b:
        return a
    if isinstance(a, Rep) or isinstance(b, Rep):
        if isinstance(a, Rep) and isinstance(b, Rep) and a.index == b.index:
            return Rep(a.fields | b.fields, a.index)
        return None
    return Alt(a.fields | b.fields)


def join_path(a: Path, b: Path) -> Path | None:
    """Least common widening, or None when the shapes differ."""
    if len(a.segs) != len(b.segs):
        return None
    segs = []
    for x, y in zip(a.segs, b.segs):
        j = join_seg(x, y)
        if j is None:
            return None
        segs.append(j)
    try:
        return Path(tuple(segs))
    except ValueError:
        return None


def join_fieldmap(a: FieldMap, b: FieldMap) -> FieldMap:
    targets = {t for _, t in a.entries} & {t for _, t in b.entries}
    cands = []
    for t in targets:
        ka = frozenset().union(*(k for k, tt in a.entries if tt == t))
        kb = frozenset().union(*(k for k, tt in b.entries if tt == t))
        # a key that covers several entries on one side would merge distinct facts
        if sum(1 for _, tt in a.entries if tt == t) > 1 or sum(1 for _, tt in b.entries if tt == t) > 1:
            continue
        cands.append((ka | kb, t))
    keep = [
        (k, t) for k, t in cands
        if not any(k & k2 for k2, t2 in cands if t2 != t)
    ]
    return FieldMap(frozenset(keep))


# -- reindexing --------------------------------------------------------------


def reindex_path(p: Path, k: str, f: str) -> Path:
    """Contract ``Rep(F, k)`` followed by a step within ``F`` into ``Rep(F, k)``.

    ``f`` names the step being absorbed; ``"Left|Right"`` absorbs any step
    whose fields lie inside that set.
    """
    absorbed = frozenset(f.split("|"))
    out: list[PathSeg] = []
    i = 0
    segs = p.segs
    while i < len(segs):
        seg = segs[i]
        out.append(seg)
        if isinstance(seg, Rep) and seg.index == k and i + 1 < len(segs):
            nxt = segs[i + 1]
            after = segs[i + 2] if i + 2 < len(segs) else None
            merges = isinstance(after, Rep) and after.index == k
            if (not isinstance(nxt, Rep) and nxt.fields <= absorbed and nxt.fields <= seg.fields
                    and not merges):
                i += 2
                continue
        i += 1
    return Path(tuple(out))


def instantiate(p: Path, k: str, n: int) -> Path:
    """Replace ``Rep(F, k)`` by ``n`` explicit steps over ``F``."""
    out: list[PathSeg] = []
    for seg in p.segs:
        if isinstance(seg, Rep) and seg.index == k:
            out.extend([step(seg.fields)] * n)
        else:
            out.append(seg)
    return Path(tuple(out))


# -- may-alias ---------------------------------------------------------------


def _strip_common(a: tuple[PathSeg, ...], b: tuple[PathSeg, ...]) -> tuple[tuple, tuple]:
    i = 0
    while i < len(a) and i < len(b) and a[i] == b[i]:
        i += 1
    a, b = a[i:], b[i:]
    j = 0
    while j < len(a) and j < len(b) and a[-1 - j] == b[-1 - j]:
        j += 1
    return a[: len(a) - j], b[: len(b) - j]


def _length_form(segs: Iterable[PathSeg]) -> tuple[int, dict[str, int]]:
    const = 0
    coeff: dict[str, int] = {}
    for s in segs:
        if isinstance(s, Rep):
            coeff[s.index] = coeff.get(s.index, 0) + 1
        else:
            const += 1
    return const, coeff


def _affine_solvable(c: int, coeff: dict[str, int], at_least: int = 0) -> bool:
    """Is ``c + sum(coeff[v] * n_v) >= at_least`` with equality when at_least == 0
    satisfiable over naturals?  Conservative: may answer True spuriously."""
    coeff = {v: d for v, d in coeff.items() if d}
    if at_least:
        # inequality form: satisfiable unless bounded above below the target
        if any(d > 0 for d in coeff.values()):
            return True
        return c >= at_least
    if not coeff:
        return c == 0
    pos = [d for d in coeff.values() if d > 0]
    neg = [d for d in coeff.values() if d < 0]
    if not neg and c > 0:
        return False
    if not pos and c < 0:
        return False
    g = 0
    for d in coeff.values():
        g = math.gcd(g, abs(d))
    return c % g == 0


def _fixed_prefix_clash(a: tuple[PathSeg, ...], b: tuple[PathSeg, ...]) -> bool:
    for x, y in zip(a, b):
        if isinstance(x, Rep) or isinstance(y, Rep):
            return False
        if not (x.fields & y.fields):
            return True
    return False


def _enumerate_intersect(a: Path, b: Path, bound: int) -> bool:
    names = sorted(a.indices() | b.indices())
    for values in itertools.product(range(bound + 1), repeat=len(names)):
        env = dict(zip(names, values))
        if _seq_intersect(a, b, env):
            return True
    return False


def _seq_intersect(a: Path, b: Path, env: dict[str, int]) -> bool:
    """Do the (per-position field-set) expansions of a and b share a word?"""
    ea = _expand_sets(a, env)
    eb = _expand_sets(b, env)
    if len(ea) != len(eb):
        return False
    return all(x & y for x, y in zip(ea, eb))


def _expand_sets(p: Path, env: dict[str, int]) -> list[frozenset[str]]:
    out: list[frozenset[str]] = []
    for seg in p.segs:
        if isinstance(seg, Rep):
            out.extend([seg.fields] * env[seg.index])
        else:
            out.append(seg.fields)
    return out


def may_alias(a: Path, b: Path, bound: int = 3) -> bool:
    if a == b:
        return True
    sa, sb = _strip_common(a.segs, b.segs)
    if not sa and not sb:
        return True
    pa, pb = Path(sa), Path(sb)
    if _enumerate_intersect(pa, pb, bound):
        return True
    ca, fa = _length_form(sa)
    cb, fb = _length_form(sb)
    coeff = dict(fa)
    for v, d in fb.items():
        coeff[v] = coeff.get(v, 0) - d
    if not _affine_solvable(ca - cb, coeff):
        return False
    if _fixed_prefix_clash(sa, sb) or _fixed_prefix_clash(sa[::-1], sb[::-1]):
        return False
    return True


def may_extend(prefix: Path, path: Path, bound: int = 3) -> bool:
    """Could ``path`` denote a strict descendant of a node denoted by ``prefix``?"""
    # strip a common syntactic prefix
    i = 0
    while i < len(prefix.segs) and i < len(path.segs) and prefix.segs[i] == path.segs[i]:
        i += 1
    pre, rest = prefix.segs[i:], path.segs[i:]
    names = sorted(Path(pre).indices() | Path(rest).indices())
    for values in itertools.product(range(bound + 1), repeat=len(names)):
        env = dict(zip(names, values))
        ep = _expand_sets(Path(pre), env)
        er = _expand_sets(Path(rest), env)
        if len(er) > len(ep) and all(x & y for x, y in zip(ep, er)):
            return True
    cp, fp = _length_form(pre)
    cr, fr = _length_form(rest)
    coeff = dict(fr)
    for v, d in fp.items():
        coeff[v] = coeff.get(v, 0) - d
    if not _affine_solvable(cr - cp, coeff, at_least=1):
        return False
    if _fixed_prefix_clash(pre, rest):
        return False
    return True
