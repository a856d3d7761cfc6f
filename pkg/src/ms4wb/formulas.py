"""Bimodal formulas: AST, parser, printer, evaluation, validity, axioms.

Two languages share the propositional core: the monadic-S4 language with
``<>``/``[]`` (quasi-order modality) and ``E``/``A`` (equivalence
modality), and the two-equivalence language with ``<1>``/``[1]`` and
``<2>``/``[2]``.  A formula's language is inferred from the modalities it
uses; mixing the two is an error.

Grammar (ASCII), precedence unary > ``&`` > ``|`` > ``->``::

    formula := or ('->' formula)?          # right-associative
    or      := and ('|' and)*              # left-associative
    and     := unary ('&' unary)*          # left-associative
    unary   := ('~'|'<>'|'[]'|'E'|'A'|'<1>'|'[1]'|'<2>'|'[2]'|'#<>'|'#[]') unary
             | '0' | '1' | variable | '(' formula ')'

Variables are lowercase identifiers.  The black prefixes ``#<>`` and
``#[]`` are sugar: they expand to ``<>E`` and ``[]A`` at parse time and
never appear in an AST or in printed output.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass
from typing import Iterator, Mapping

import numpy as np

from .errors import BudgetError, EvalError, ParseError
from .frames import Frame, classify
from .sets import PointSet

DEFAULT_BUDGET = 1 << 22
BUDGET_ENV_VAR = "MS4WB_BUDGET"


# ---------------------------------------------------------------------------
# AST


class Formula:
    __slots__ = ()

    def __str__(self):
        return format_formula(self)


@dataclass(frozen=True)
class Var(Formula):
    name: str


@dataclass(frozen=True)
class Bot(Formula):
    pass


@dataclass(frozen=True)
class Top(Formula):
    pass


@dataclass(frozen=True)
class Not(Formula):
    sub: Formula


@dataclass(frozen=True)
class And(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Or(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Implies(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Dia(Formula):
    sub: Formula


@dataclass(frozen=True)
class Box(Formula):
    sub: Formula


@dataclass(frozen=True)
class Ex(Formula):
    sub: Formula


@dataclass(frozen=True)
class All(Formula):
    sub: Formula


@dataclass(frozen=True)
class Ex1(Formula):
    sub: Formula


@dataclass(frozen=True)
class All1(Formula):
    sub: Formula


@dataclass(frozen=True)
class Ex2(Formula):
    sub: Formula


@dataclass(frozen=True)
class All2(Formula):
    sub: Formula


def black_dia(sub: Formula) -> Formula:
    """The composite possibility ('first saturate, then look back along R')."""
    return Dia(Ex(sub))


def black_box(sub: Formula) -> Formula:
    return Box(All(sub))


_UNARY = {Not, Dia, Box, Ex, All, Ex1, All1, Ex2, All2}
_BINARY = {And, Or, Implies}
_MS4_OPS = {Dia, Box, Ex, All}
_S52_OPS = {Ex1, All1, Ex2, All2}


def subformulas(phi: Formula) -> Iterator[Formula]:
    """All subterms, children before parents, each distinct term once."""
    seen = set()

    def rec(node):
        if node in seen:
            return
        if type(node) in _UNARY:
            yield from rec(node.sub)
        elif type(node) in _BINARY:
            yield from rec(node.left)
            yield from rec(node.right)
        if node not in seen:
            seen.add(node)
            yield node

    yield from rec(phi)


def variables(phi: Formula) -> tuple[str, ...]:
    names = sorted({f.name for f in subformulas(phi) if isinstance(f, Var)})
    return tuple(names)


def language(phi: Formula) -> str:
    """'ms4', 's52', or 'prop' for purely propositional formulas."""
    kinds = {type(f) for f in subformulas(phi)}
    has_ms4 = bool(kinds & _MS4_OPS)
    has_s52 = bool(kinds & _S52_OPS)
    if has_ms4 and has_s52:
        raise EvalError("formula mixes the two modal languages")
    if has_ms4:
        return "ms4"
    if has_s52:
        return "s52"
    return "prop"


# ---------------------------------------------------------------------------
# Parser

_TOKEN_RE = re.compile(
    r"""
      (?P<ws>\s+)
    | (?P<blackdia>\#<>)
    | (?P<blackbox>\#\[\])
    | (?P<ex1><1>)
    | (?P<ex2><2>)
    | (?P<all1>\[1\])
    | (?P<all2>\[2\])
    | (?P<dia><>)
    | (?P<box>\[\])
    | (?P<arrow>->)
    | (?P<ident>[a-z][a-z0-9_]*)
    | (?P<char>[01~&|()EA])
    """,
    re.VERBOSE,
)

RESERVED = ("E", "A")


def _tokenize(text: str):
    pos = 0
    out = []
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        if kind != "ws":
            value = m.group()
            out.append((kind if kind != "char" else value, value, pos))
        pos = m.end()
    out.append(("eof", "", len(text)))
    return out


_PREFIX = {
    "~": Not,
    "dia": Dia,
    "box": Box,
    "E": Ex,
    "A": All,
    "ex1": Ex1,
    "all1": All1,
    "ex2": Ex2,
    "all2": All2,
    "blackdia": black_dia,
    "blackbox": black_box,
}


class _Parser:
    def __init__(self, tokens):
        self.tokens = tokens
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, kind):
        tok = self.take()
        if tok[0] != kind:
            raise ParseError(f"expected {kind!r}, found {tok[1]!r}", tok[2])
        return tok

    def formula(self) -> Formula:
        left = self.disjunction()
        if self.peek()[0] == "arrow":
            self.take()
            return Implies(left, self.formula())
        return left

    def disjunction(self) -> Formula:
        node = self.conjunction()
        while self.peek()[0] == "|":
            self.take()
            node = Or(node, self.conjunction())
        return node

    def conjunction(self) -> Formula:
        node = self.unary()
        while self.peek()[0] == "&":
            self.take()
            node = And(node, self.unary())
        return node

    def unary(self) -> Formula:
        kind, value, pos = self.peek()
        if kind in _PREFIX:
            self.take()
            return _PREFIX[kind](self.unary())
        if kind == "0":
            self.take()
            return Bot()
        if kind == "1":
            self.take()
            return Top()
        if kind == "ident":
            self.take()
            if value in RESERVED:
                raise ParseError(f"reserved word {value!r} used as variable", pos)
            return Var(value)
        if kind == "(":
            self.take()
            node = self.formula()
            self.expect(")")
            return node
        raise ParseError(f"unexpected token {value!r}", pos)


def parse(text: str) -> Formula:
    parser = _Parser(_tokenize(text))
    node = parser.formula()
    tok = parser.peek()
    if tok[0] != "eof":
        raise ParseError(f"trailing input {tok[1]!r}", tok[2])
    return node


# ---------------------------------------------------------------------------
# Printer

_PREC = {Implies: 1, Or: 2, And: 3}
_UNARY_TEXT = {
    Not: "~", Dia: "<>", Box: "[]", Ex: "E ", All: "A ",
    Ex1: "<1>", All1: "[1]", Ex2: "<2>", All2: "[2]",
}


def format_formula(phi: Formula) -> str:
    """Canonical text form; ``parse`` inverts it exactly."""

    def wrap(child, parent_prec, right_of_same=False):
        text = emit(child)
        prec = _PREC.get(type(child))
        if prec is None:
            return text
        if prec < parent_prec or (prec == parent_prec and right_of_same):
            return f"({text})"
        return text

    def emit(node):
        t = type(node)
        if t is Var:
            return node.name
        if t is Bot:
            return "0"
        if t is Top:
            return "1"
        if t in _UNARY_TEXT:
            child = emit(node.sub)
            if type(node.sub) in _PREC:
                child = f"({child})"
            return _UNARY_TEXT[t] + child
        if t is And:
            return f"{wrap(node.left, 3)} & {wrap(node.right, 3, True)}"
        if t is Or:
            return f"{wrap(node.left, 2)} | {wrap(node.right, 2, True)}"
        if t is Implies:
            # right-associative: parenthesize a nested implication on the left
            left = wrap(node.left, 1, True)
            return f"{left} -> {emit(node.right)}"
        raise EvalError(f"unknown node {node!r}")

    return emit(phi)


# ---------------------------------------------------------------------------
# Axiom registry


def _fold_or(parts):
    node = parts[0]
    for p in parts[1:]:
        node = Or(node, p)
    return node


def _fold_and(parts):
    node = parts[0]
    for p in parts[1:]:
        node = And(node, p)
    return node


def _p_formula(n: int) -> Formula:
    phi = Implies(Dia(Box(Var("q1"))), Box(Var("q1")))
    for k in range(2, n + 1):
        q = Var(f"q{k}")
        phi = Implies(Dia(And(Box(q), Not(phi))), Box(q))
    return phi


def _alt0_formula(k: int) -> Formula:
    disjuncts = [Box(All(Var("p1")))]
    for j in range(1, k + 1):
        antecedent = _fold_and([All(Var(f"p{i}")) for i in range(1, j + 1)])
        disjuncts.append(Box(Implies(antecedent, All(Var(f"p{j + 1}")))))
    return _fold_or(disjuncts)


def _s52_diamond(sub: Formula) -> Formula:
    return Or(Ex1(sub), Ex2(sub))


def _iff(a: Formula, b: Formula) -> Formula:
    return And(Implies(a, b), Implies(b, a))


def axiom(name: str, k: int | None = None) -> Formula:
    """Named axioms; numeric parameters are passed as ``k``."""
    p = Var("p")
    fixed = {
        "ms4.commute": Implies(Ex(Dia(p)), Dia(Ex(p))),
        "ms4s": Implies(black_dia(black_box(p)), black_box(p)),
        "s4u.bridge": Implies(Dia(p), Ex(p)),
        "s52.sym": Implies(Dia(Box(p)), Box(p)),
        "lemma2_3.1": _iff(Ex(Dia(Ex(p))), Dia(Ex(p))),
        "lemma2_3.2": _iff(All(Box(All(p))), Box(All(p))),
        "lemma2_3.3": Implies(Ex(Box(p)), Box(Ex(p))),
        "lemma2_3.4": _iff(Dia(All(Dia(p))), All(Dia(p))),
    }
    if name in fixed:
        if k is not None:
            raise EvalError(f"axiom {name!r} takes no parameter")
        return fixed[name]
    if name == "P":
        if k is None or k < 1:
            raise EvalError("axiom 'P' needs a parameter k >= 1")
        return _p_formula(k)
    if name == "alt0":
        if k is None or k < 1:
            raise EvalError("axiom 'alt0' needs a parameter k >= 1")
        return _alt0_formula(k)
    if name == "s52.trans":
        if k is None or k < 0:
            raise EvalError("axiom 's52.trans' needs a parameter k >= 0")
        lhs = p
        for _ in range(k + 1):
            lhs = _s52_diamond(lhs)
        rhs = p
        for _ in range(k):
            rhs = _s52_diamond(rhs)
        return Implies(lhs, rhs)
    raise EvalError(f"unknown axiom {name!r}")


AXIOM_NAMES = (
    "ms4.commute", "ms4s", "s4u.bridge", "s52.sym",
    "lemma2_3.1", "lemma2_3.2", "lemma2_3.3", "lemma2_3.4",
    "P", "alt0", "s52.trans",
)


# ---------------------------------------------------------------------------
# Evaluation

Valuation = Mapping[str, PointSet]


def _frame_language(frame) -> str:
    return "ms4" if isinstance(frame, Frame) else "s52"


def _check_language(frame, phi: Formula) -> None:
    lang = language(phi)
    if lang != "prop" and lang != _frame_language(frame):
        raise EvalError(
            f"{lang} formula evaluated on a {_frame_language(frame)} frame"
        )


def evaluate(frame, phi: Formula, valuation: Valuation) -> PointSet:
    """Clause-wise evaluation; returns the truth set of ``phi``."""
    _check_language(frame, phi)
    n = frame.n
    full = frame.full_mask

    def ev(node) -> int:
        t = type(node)
        if t is Var:
            if node.name not in valuation:
                raise EvalError(f"valuation missing variable {node.name!r}")
            ps = valuation[node.name]
            if ps.width != n:
                raise EvalError(f"valuation for {node.name!r} has wrong width")
            return ps.mask
        if t is Bot:
            return 0
        if t is Top:
            return full
        if t is Not:
            return ev(node.sub) ^ full
        if t is And:
            return ev(node.left) & ev(node.right)
        if t is Or:
            return ev(node.left) | ev(node.right)
        if t is Implies:
            return (ev(node.left) ^ full) | ev(node.right)
        if t is Dia:
            return frame.dia(ev(node.sub))
        if t is Box:
            return frame.box(ev(node.sub))
        if t is Ex:
            return frame.ex(ev(node.sub))
        if t is All:
            return frame.all_(ev(node.sub))
        if t is Ex1:
            return frame.ex1(ev(node.sub))
        if t is All1:
            return frame.all1(ev(node.sub))
        if t is Ex2:
            return frame.ex2(ev(node.sub))
        if t is All2:
            return frame.all2(ev(node.sub))
        raise EvalError(f"unknown node {node!r}")

    return PointSet(ev(phi), n)


# ---------------------------------------------------------------------------
# Validity by exhaustive valuation sweep


@dataclass(frozen=True)
class ValidityResult:
    valid: bool
    counterexample: dict[str, PointSet] | None
    valuations_checked: int

    def __bool__(self):
        return self.valid


def resolve_budget(budget: int | None = None) -> int:
    if budget is not None:
        return budget
    env = os.environ.get(BUDGET_ENV_VAR)
    if env:
        return int(env)
    return DEFAULT_BUDGET


def _saturation_columns(frame, opname: str) -> list[int]:
    """Column masks: col[i] = points whose op-image meets {i}."""
    rows = frame.op_rows(opname)
    n = frame.n
    cols = [0] * n
    for i, row in enumerate(rows):
        m = row
        while m:
            low = m & -m
            cols[low.bit_length() - 1] |= 1 << i
            m ^= low
    return cols


def _vector_ops(frame):
    """Vectorized dual operators over numpy arrays of bitmasks."""
    n = frame.n
    full = np.uint64(frame.full_mask)
    if _frame_language(frame) == "ms4":
        op_names = {"dia": "dia", "ex": "ex"}
    else:
        op_names = {"ex1": "ex1", "ex2": "ex2"}
    columns = {name: _saturation_columns(frame, name) for name in op_names}

    def possibility(cols):
        col_arr = [np.uint64(c) for c in cols]

        def apply(arr):
            out = np.zeros_like(arr)
            for i in range(n):
                hit = (arr >> np.uint64(i)) & np.uint64(1)
                out |= np.where(hit.astype(bool), col_arr[i], np.uint64(0))
            return out

        return apply

    ops = {name: possibility(cols) for name, cols in columns.items()}

    def necessity(pos):
        def apply(arr):
            return pos(arr ^ full) ^ full

        return apply

    table = {}
    if "dia" in ops:
        table[Dia] = ops["dia"]
        table[Box] = necessity(ops["dia"])
        table[Ex] = ops["ex"]
        table[All] = necessity(ops["ex"])
    else:
        table[Ex1] = ops["ex1"]
        table[All1] = necessity(ops["ex1"])
        table[Ex2] = ops["ex2"]
        table[All2] = necessity(ops["ex2"])
    return table, full


def is_valid(frame, phi: Formula, budget: int | None = None) -> ValidityResult:
    """Check validity by sweeping every valuation of ``phi``'s variables.

    The sweep is exhaustive and ordered: variables sorted by name, each
    assigned a point-set bitmask, the tuple enumerated lexicographically
    with the first variable most significant.  The first failing
    valuation in that order is returned as the counterexample.
    """
    _check_language(frame, phi)
    names = variables(phi)
    n = frame.n
    v = len(names)
    budget = resolve_budget(budget)
    bit_count = v * n
    if bit_count > 0 and (1 << bit_count) > budget:
        raise BudgetError(
            f"{v} variables x {n} points needs 2^{bit_count} = "
            f"{1 << bit_count} valuations; budget is {budget}"
        )
    if v == 0:
        value = evaluate(frame, phi, {})
        ok = value.mask == frame.full_mask
        return ValidityResult(ok, None if ok else {}, 1)
    if n > 63:
        raise BudgetError("frames beyond 63 points are not supported by the sweep")

    table, full = _vector_ops(frame)
    total = 1 << bit_count
    point_bits = np.uint64(n)
    var_mask = np.uint64((1 << n) - 1)
    shifts = [np.uint64((v - 1 - i) * n) for i in range(v)]
    chunk = 1 << 16

    def ev(node, idx):
        t = type(node)
        if t is Var:
            i = names.index(node.name)
            return (idx >> shifts[i]) & var_mask
        if t is Bot:
            return np.zeros_like(idx)
        if t is Top:
            return np.full_like(idx, full)
        if t is Not:
            return ev(node.sub, idx) ^ full
        if t is And:
            return ev(node.left, idx) & ev(node.right, idx)
        if t is Or:
            return ev(node.left, idx) | ev(node.right, idx)
        if t is Implies:
            return (ev(node.left, idx) ^ full) | ev(node.right, idx)
        if t in table:
            return table[t](ev(node.sub, idx))
        raise EvalError(f"unknown node {node!r}")

    for start in range(0, total, chunk):
        stop = min(start + chunk, total)
        idx = np.arange(start, stop, dtype=np.uint64)
        result = ev(phi, idx)
        failing = result != full
        if failing.any():
            first = int(idx[int(np.argmax(failing))])
            counterexample = {
                name: PointSet((first >> int(shifts[i])) & ((1 << n) - 1), n)
                for i, name in enumerate(names)
            }
            return ValidityResult(False, counterexample, first + 1)
    return ValidityResult(True, None, total)


# ---------------------------------------------------------------------------
# Relational fast paths for the named correspondences


def relational_validity(frame, name: str, k: int | None = None) -> bool | None:
    """Frame-condition shortcut for a named axiom, or None when no shortcut
    applies (``alt0`` only has one on Q-rooted frames)."""
    if name == "s52.sym":
        return frame.r.is_symmetric()
    if name == "ms4s":
        return frame.q().is_symmetric()
    if name == "P":
        if k is None or k < 1:
            raise EvalError("axiom 'P' needs a parameter k >= 1")
        return classify(frame).depth <= k
    if name == "alt0":
        if k is None or k < 1:
            raise EvalError("axiom 'alt0' needs a parameter k >= 1")
        if not classify(frame).is_si:
            return None
        return len(frame.e.blocks) <= k
    return None
