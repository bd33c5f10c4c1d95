"""VNN-LIB properties as adversarial queries.

A query is the negated verification problem: it is SAT when some input in a
disjunct's box drives the network output into that disjunct's constraint set.
Parsing produces disjunctive normal form; pure-input atoms tighten each
disjunct's box and pure-output atoms become linear constraints.

Supported subset: ``declare-const`` of ``X_i``/``Y_j`` as ``Real``, top-level
``assert`` over ``and``/``or``/``<=``/``>=`` with linear ``+``/``-``/``*``
terms and decimal or scientific literals.
"""

from __future__ import annotations

import enum
import itertools
import math
import re
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionMismatch, InvalidQuery, UnsupportedFeature, VnnSyntaxError
from .sexpr import Atom, SList, read_all

MAX_DISJUNCTS = 100_000

_LITERAL = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")
_VARNAME = re.compile(r"^([XY])_(\d+)$")


class VarKind(enum.Enum):
    INPUT = "X"
    OUTPUT = "Y"


@dataclass(frozen=True)
class VariableRef:
    kind: VarKind
    index: int

    @property
    def sort_key(self) -> tuple[str, int]:
        return (self.kind.value, self.index)

    def __lt__(self, other: "VariableRef") -> bool:
        return self.sort_key < other.sort_key

    def __str__(self) -> str:
        return f"{self.kind.value}_{self.index}"

    @classmethod
    def x(cls, index: int) -> "VariableRef":
        return cls(VarKind.INPUT, index)

    @classmethod
    def y(cls, index: int) -> "VariableRef":
        return cls(VarKind.OUTPUT, index)


class Relation(enum.Enum):
    LE = "<="
    GE = ">="


@dataclass(frozen=True)
class LinearConstraint:
    """``sum(coef * var) <relation> bound``; build via :meth:`make` to normalize."""

    terms: tuple[tuple[float, VariableRef], ...]
    relation: Relation
    bound: float

    @classmethod
    def make(cls, terms: Iterable[tuple[float, VariableRef]], relation: Relation | str,
             bound: float) -> "LinearConstraint":
        merged: dict[VariableRef, float] = {}
        for coef, var in terms:
            merged[var] = merged.get(var, 0.0) + float(coef)
        norm = tuple((c, v) for v, c in sorted(merged.items()) if c != 0.0)
        if not norm:
            raise InvalidQuery("linear constraint has no terms")
        return cls(norm, Relation(relation), float(bound) + 0.0)  # +0.0 folds -0.0

    @property
    def variables(self) -> tuple[VariableRef, ...]:
        return tuple(v for _, v in self.terms)

    def lhs(self, y: Sequence[float]) -> float:
        acc = 0.0
        for coef, var in self.terms:
            acc += coef * float(y[var.index])
        return acc

    def slack(self, y: Sequence[float]) -> float:
        """Non-negative iff satisfied by the output vector ``y``."""
        v = self.lhs(y)
        return v - self.bound if self.relation is Relation.GE else self.bound - v

    def sort_key(self) -> tuple:
        return (tuple((v.sort_key, c) for c, v in self.terms), self.relation.value, self.bound)

    def __str__(self) -> str:
        lhs = " + ".join(f"{c:g}*{v}" for c, v in self.terms)
        return f"{lhs} {self.relation.value} {self.bound:g}"


@dataclass(frozen=True)
class InputBox:
    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) != len(hi):
            raise DimensionMismatch(f"box bounds have lengths {len(lo)} and {len(hi)}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def is_empty(self) -> bool:
        return any(l > u for l, u in zip(self.lower, self.upper))

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.array(self.lower, dtype=np.float64), np.array(self.upper, dtype=np.float64)


@dataclass(frozen=True)
class Disjunct:
    box: InputBox
    constraints: tuple[LinearConstraint, ...]

    @property
    def is_vacuous(self) -> bool:
        return self.box.is_empty

    def sort_key(self) -> tuple:
        return (self.box.lower, self.box.upper, tuple(c.sort_key() for c in self.constraints))

    def constraint_matrix(self, num_outputs: int) -> tuple[np.ndarray, np.ndarray]:
        """Rows ``a`` and offsets ``c`` with slack = ``a @ y - c`` (GE rows kept, LE rows negated)."""
        A = np.zeros((len(self.constraints), num_outputs))
        c = np.zeros(len(self.constraints))
        for k, con in enumerate(self.constraints):
            sign = 1.0 if con.relation is Relation.GE else -1.0
            for coef, var in con.terms:
                A[k, var.index] += sign * coef
            c[k] = sign * con.bound
        return A, c


@dataclass(frozen=True)
class AdversarialQuery:
    """Canonical DNF query; constraint and disjunct order is normalized on construction."""

    num_inputs: int
    num_outputs: int
    disjuncts: tuple[Disjunct, ...]

    def __post_init__(self):
        if not self.disjuncts:
            raise InvalidQuery("query needs at least one disjunct")
        canon = []
        for d in self.disjuncts:
            if d.box.dim != self.num_inputs:
                raise DimensionMismatch(f"box has dimension {d.box.dim}, expected {self.num_inputs}")
            for con in d.constraints:
                for var in con.variables:
                    if var.kind is not VarKind.OUTPUT:
                        raise InvalidQuery(f"output constraint references input {var}")
                    if var.index >= self.num_outputs:
                        raise DimensionMismatch(f"{var} out of range for {self.num_outputs} outputs")
            uniq = {c.sort_key(): c for c in d.constraints}
            canon.append(Disjunct(d.box, tuple(uniq[k] for k in sorted(uniq))))
        uniq_d = {d.sort_key(): d for d in canon}
        object.__setattr__(self, "disjuncts", tuple(uniq_d[k] for k in sorted(uniq_d)))

    def check_network(self, d_in: int, d_out: int) -> None:
        if d_in != self.num_inputs or d_out != self.num_outputs:
            raise DimensionMismatch(
                f"query is {self.num_inputs}->{self.num_outputs} but network is {d_in}->{d_out}"
            )

    def satisfied_by(self, x: Sequence[float], y: Sequence[float]) -> bool:
        """Exact membership test (no tolerance)."""
        for d in self.disjuncts:
            if all(l <= xi <= u for xi, l, u in zip(x, d.box.lower, d.box.upper)) and all(
                c.slack(y) >= 0.0 for c in d.constraints
            ):
                return True
        return False


@dataclass(frozen=True)
class RobustnessParams:
    center: tuple[float, ...]
    epsilon: float
    target: int
    clip_lower: float | None = None
    clip_upper: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        if not self.epsilon >= 0.0:
            raise InvalidQuery(f"epsilon must be >= 0, got {self.epsilon}")


# ----------------------------------------------------------------------------
# builders


def make_robustness_query(params: RobustnessParams, d_in: int, d_out: int) -> AdversarialQuery:
    """l-infinity ball around ``center``; one disjunct per competing class."""
    if len(params.center) != d_in:
        raise DimensionMismatch(f"center has length {len(params.center)}, expected {d_in}")
    if not 0 <= params.target < d_out:
        raise DimensionMismatch(f"target {params.target} out of range for {d_out} outputs")
    lo = [c - params.epsilon for c in params.center]
    hi = [c + params.epsilon for c in params.center]
    if params.clip_lower is not None:
        lo = [max(v, params.clip_lower) for v in lo]
        hi = [max(v, params.clip_lower) for v in hi]
    if params.clip_upper is not None:
        lo = [min(v, params.clip_upper) for v in lo]
        hi = [min(v, params.clip_upper) for v in hi]
    box = InputBox(tuple(lo), tuple(hi))
    t = VariableRef.y(params.target)
    disjuncts = [
        Disjunct(box, (LinearConstraint.make([(1.0, VariableRef.y(i)), (-1.0, t)], Relation.GE, 0.0),))
        for i in range(d_out)
        if i != params.target
    ]
    if not disjuncts:
        raise InvalidQuery("robustness query needs at least two outputs")
    return AdversarialQuery(d_in, d_out, tuple(disjuncts))


def minimal_output_conjunct(index: int, competitors: Iterable[int]) -> list[LinearConstraint]:
    """Constraints stating output ``index`` is no larger than each competitor."""
    return [
        LinearConstraint.make([(1.0, VariableRef.y(index)), (-1.0, VariableRef.y(j))], Relation.LE, 0.0)
        for j in competitors
        if j != index
    ]


def make_unsafe_set_query(box: InputBox, unsafe_disjuncts: Sequence[Sequence[LinearConstraint]],
                          num_outputs: int) -> AdversarialQuery:
    """One disjunct per unsafe conjunction, all sharing ``box``."""
    if not unsafe_disjuncts:
        raise InvalidQuery("empty unsafe set: a disjunction of nothing is unsatisfiable")
    return AdversarialQuery(
        box.dim, num_outputs, tuple(Disjunct(box, tuple(conj)) for conj in unsafe_disjuncts)
    )


# ----------------------------------------------------------------------------
# parser


def _parse_literal(atom: Atom) -> float:
    if not _LITERAL.match(atom.text):
        raise VnnSyntaxError(f"expected a numeric literal, got {atom.text!r}", atom.line, atom.column)
    return float(atom.text)


class _Linear:
    """Affine expression ``sum(terms) + const``."""

    __slots__ = ("terms", "const")

    def __init__(self, terms: dict | None = None, const: float = 0.0):
        self.terms: dict[VariableRef, float] = terms or {}
        self.const = const

    def scaled(self, k: float) -> "_Linear":
        return _Linear({v: k * c for v, c in self.terms.items()}, k * self.const)

    def plus(self, other: "_Linear") -> "_Linear":
        terms = dict(self.terms)
        for v, c in other.terms.items():
            terms[v] = terms.get(v, 0.0) + c
        return _Linear(terms, self.const + other.const)


class _Parser:
    def __init__(self, text: str):
        self.forms = read_all(text)
        self.declared: dict[str, VariableRef] = {}

    def run(self) -> AdversarialQuery:
        asserts = []
        for form in self.forms:
            if not isinstance(form, SList):
                raise VnnSyntaxError(f"unexpected token {form.text!r} at top level", form.line, form.column)
            head = form.head()
            if head == "declare-const":
                self._declare(form)
            elif head == "assert":
                if len(form.items) != 2:
                    raise VnnSyntaxError("assert takes exactly one formula", form.line, form.column)
                asserts.append(form.items[1])
            elif head is None:
                raise VnnSyntaxError("expected a command", form.line, form.column)
            else:
                raise UnsupportedFeature(f"command {head!r}", form.line, form.column)

        d_in = self._count(VarKind.INPUT)
        d_out = self._count(VarKind.OUTPUT)
        if d_in == 0:
            raise InvalidQuery("property declares no input variables")

        conjunctions: list[list] = [[]]
        for formula in asserts:
            conjunctions = self._and(conjunctions, self._dnf(formula))
        disjuncts = [self._disjunct(conj, d_in, k) for k, conj in enumerate(conjunctions)]
        return AdversarialQuery(d_in, d_out, tuple(disjuncts))

    def _declare(self, form: SList) -> None:
        if len(form.items) != 3 or not all(isinstance(a, Atom) for a in form.items):
            raise VnnSyntaxError("malformed declare-const", form.line, form.column)
        name, sort = form.items[1], form.items[2]
        if sort.text != "Real":
            raise UnsupportedFeature(f"sort {sort.text!r} (only Real)", sort.line, sort.column)
        m = _VARNAME.match(name.text)
        if not m:
            raise UnsupportedFeature(f"variable name {name.text!r} (expected X_i or Y_j)", name.line, name.column)
        if name.text in self.declared:
            raise VnnSyntaxError(f"{name.text} declared twice", name.line, name.column)
        kind = VarKind.INPUT if m.group(1) == "X" else VarKind.OUTPUT
        self.declared[name.text] = VariableRef(kind, int(m.group(2)))

    def _count(self, kind: VarKind) -> int:
        idx = sorted(v.index for v in self.declared.values() if v.kind is kind)
        if idx != list(range(len(idx))):
            raise InvalidQuery(f"{kind.value} variables are not numbered 0..{len(idx) - 1}")
        return len(idx)

    @staticmethod
    def _and(left: list[list], right: list[list]) -> list[list]:
        if len(left) * len(right) > MAX_DISJUNCTS:
            raise UnsupportedFeature(f"DNF expansion exceeds {MAX_DISJUNCTS} disjuncts")
        return [a + b for a, b in itertools.product(left, right)]

    def _dnf(self, node) -> list[list]:
        if isinstance(node, Atom):
            raise UnsupportedFeature(f"bare atom {node.text!r} as formula", node.line, node.column)
        head = node.head()
        args = node.items[1:]
        if head == "and":
            out: list[list] = [[]]
            for a in args:
                out = self._and(out, self._dnf(a))
            return out
        if head == "or":
            if not args:
                raise UnsupportedFeature("empty 'or'", node.line, node.column)
            out = []
            for a in args:
                out.extend(self._dnf(a))
                if len(out) > MAX_DISJUNCTS:
                    raise UnsupportedFeature(f"DNF expansion exceeds {MAX_DISJUNCTS} disjuncts")
            return out
        if head in ("<=", ">="):
            if len(args) < 2:
                raise VnnSyntaxError(f"'{head}' needs two operands", node.line, node.column)
            exprs = [self._linear(a) for a in args]
            return [[self._atom(head, exprs[i], exprs[i + 1], node) for i in range(len(exprs) - 1)]]
        if head in ("<", ">"):
            raise UnsupportedFeature(f"strict inequality '{head}'", node.line, node.column)
        if head in ("forall", "exists"):
            raise UnsupportedFeature("quantifiers", node.line, node.column)
        raise UnsupportedFeature(f"connective {head!r}", node.line, node.column)

    def _linear(self, node) -> _Linear:
        if isinstance(node, Atom):
            if node.text in self.declared:
                return _Linear({self.declared[node.text]: 1.0})
            if _VARNAME.match(node.text):
                raise VnnSyntaxError(f"undeclared variable {node.text}", node.line, node.column)
            return _Linear(const=_parse_literal(node))
        head = node.head()
        args = [self._linear(a) for a in node.items[1:]]
        if head == "+" and args:
            out = _Linear()
            for a in args:
                out = out.plus(a)
            return out
        if head == "-" and args:
            if len(args) == 1:
                return args[0].scaled(-1.0)
            out = args[0]
            for a in args[1:]:
                out = out.plus(a.scaled(-1.0))
            return out
        if head == "*" and args:
            nonconst = [a for a in args if a.terms]
            if len(nonconst) > 1:
                raise UnsupportedFeature("non-linear product", node.line, node.column)
            k = 1.0
            for a in args:
                if not a.terms:
                    k *= a.const
            return nonconst[0].scaled(k) if nonconst else _Linear(const=k)
        raise UnsupportedFeature(f"term operator {head!r}", node.line, node.column)

    def _atom(self, op: str, left: _Linear, right: _Linear, node: SList):
        diff = left.plus(right.scaled(-1.0))
        terms = {v: c for v, c in diff.terms.items() if c != 0.0}
        if not terms:
            raise UnsupportedFeature("comparison without variables", node.line, node.column)
        kinds = {v.kind for v in terms}
        if len(kinds) > 1:
            raise UnsupportedFeature("atom mixes input and output variables", node.line, node.column)
        rel = Relation(op)
        bound = -diff.const
        if kinds == {VarKind.OUTPUT}:
            return LinearConstraint.make([(c, v) for v, c in terms.items()], rel, bound)
        if len(terms) != 1:
            raise UnsupportedFeature("input constraints must bound a single variable", node.line, node.column)
        (var, coef), = terms.items()
        value = bound / coef + 0.0
        upper = (rel is Relation.LE) == (coef > 0)
        return ("ub" if upper else "lb", var.index, value)

    def _disjunct(self, conj: list, d_in: int, k: int) -> Disjunct:
        lo = [-math.inf] * d_in
        hi = [math.inf] * d_in
        cons = []
        for item in conj:
            if isinstance(item, LinearConstraint):
                cons.append(item)
            elif item[0] == "lb":
                lo[item[1]] = max(lo[item[1]], item[2])
            else:
                hi[item[1]] = min(hi[item[1]], item[2])
        for i in range(d_in):
            if not (math.isfinite(lo[i]) and math.isfinite(hi[i])):
                raise InvalidQuery(f"X_{i} is not bounded on both sides in disjunct {k}")
        return Disjunct(InputBox(tuple(lo), tuple(hi)), tuple(cons))


def parse_vnnlib(text: str) -> AdversarialQuery:
    return _Parser(text).run()


def load_vnnlib(path) -> AdversarialQuery:
    with open(path, encoding="utf-8") as fh:
        return parse_vnnlib(fh.read())


# ----------------------------------------------------------------------------
# printer


def _num(v: float) -> str:
    return repr(float(v))


def _expr(con: LinearConstraint) -> str:
    parts = [str(v) if c == 1.0 else f"(* {_num(c)} {v})" for c, v in con.terms]
    return parts[0] if len(parts) == 1 else "(+ " + " ".join(parts) + ")"


def _con(con: LinearConstraint) -> str:
    return f"({con.relation.value} {_expr(con)} {_num(con.bound)})"


def _box_atoms(box: InputBox) -> list[str]:
    out = []
    for i, (l, u) in enumerate(zip(box.lower, box.upper)):
        out.append(f"(>= X_{i} {_num(l)})")
        out.append(f"(<= X_{i} {_num(u)})")
    return out


def print_vnnlib(query: AdversarialQuery) -> str:
    lines = [f"(declare-const X_{i} Real)" for i in range(query.num_inputs)]
    lines += [f"(declare-const Y_{j} Real)" for j in range(query.num_outputs)]
    boxes = {d.box for d in query.disjuncts}
    if len(query.disjuncts) == 1:
        d = query.disjuncts[0]
        lines += [f"(assert {a})" for a in _box_atoms(d.box)]
        lines += [f"(assert {_con(c)})" for c in d.constraints]
    elif len(boxes) == 1:
        lines += [f"(assert {a})" for a in _box_atoms(query.disjuncts[0].box)]
        lines.append("(assert (or")
        for d in query.disjuncts:
            lines.append("    (and " + " ".join(_con(c) for c in d.constraints) + ")")
        lines.append("))")
    else:
        lines.append("(assert (or")
        for d in query.disjuncts:
            atoms = _box_atoms(d.box) + [_con(c) for c in d.constraints]
            lines.append("    (and " + " ".join(atoms) + ")")
        lines.append("))")
    return "\n".join(lines) + "\n"
