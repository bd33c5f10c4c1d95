"""Counterexample files and their validation against a query and network.

Witness syntax: a parenthesized list of ``(<var> <value>)`` pairs, e.g.
``((X_0 0.25) (X_1 0.5) (Y_0 1.75))``. Only the input assignment is a proof
obligation; a claimed output is compared against the re-evaluated one and
reported on, but never trusted.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, MalformedWitness, VnnSyntaxError
from .netio import NetworkGraph, evaluate
from .sexpr import Atom, SList, read_all
from .speclang import AdversarialQuery

DEFAULT_TOL_IN = 1e-7
DEFAULT_TOL_OUT = 0.0
CLAIM_REL_TOL = 1e-4

_VAR = re.compile(r"^([XY])_(\d+)$")


@dataclass(frozen=True)
class Witness:
    x: tuple[float, ...]
    y_claimed: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(float(v) for v in self.x))
        if self.y_claimed is not None:
            object.__setattr__(self, "y_claimed", tuple(float(v) for v in self.y_claimed))


class Verdict(enum.Enum):
    VALID = "Valid"
    INVALID_INPUT = "InvalidInput"
    INVALID_OUTPUT = "InvalidOutput"
    MALFORMED = "Malformed"


@dataclass
class ValidationReport:
    verdict: Verdict
    matched_disjunct: int | None
    y_actual: tuple[float, ...]
    max_box_violation: float
    constraint_slacks: tuple[float, ...]
    tol_in: float = DEFAULT_TOL_IN
    tol_out: float = DEFAULT_TOL_OUT
    warnings: list[str] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return self.verdict is Verdict.VALID

    def to_text(self) -> str:
        """Key-value lines consumed by the scoring pipeline."""
        def fmt(vals):
            return " ".join(repr(float(v)) for v in vals)

        lines = [
            f"verdict={self.verdict.value}",
            f"matched_disjunct={'' if self.matched_disjunct is None else self.matched_disjunct}",
            f"max_box_violation={self.max_box_violation!r}",
            f"constraint_slacks={fmt(self.constraint_slacks)}",
            f"y_actual={fmt(self.y_actual)}",
            f"tol_in={self.tol_in!r}",
            f"tol_out={self.tol_out!r}",
        ]
        lines += [f"warning={w}" for w in self.warnings]
        return "\n".join(lines) + "\n"


def parse_witness(text: str, d_in: int | None = None, d_out: int | None = None) -> Witness:
    try:
        forms = read_all(text)
    except VnnSyntaxError as exc:
        raise MalformedWitness(str(exc)) from None
    # accept either one wrapping list or a bare sequence of pairs
    if len(forms) == 1 and isinstance(forms[0], SList) and all(isinstance(p, SList) for p in forms[0].items):
        pairs = forms[0].items
    else:
        pairs = forms
    xs: dict[int, float] = {}
    ys: dict[int, float] = {}
    for p in pairs:
        if not (isinstance(p, SList) and len(p.items) == 2 and all(isinstance(a, Atom) for a in p.items)):
            where = f"{p.line}:{p.column}" if hasattr(p, "line") else "?"
            raise MalformedWitness(f"{where}: expected (<var> <value>)")
        name, value = p.items
        m = _VAR.match(name.text)
        if not m:
            raise MalformedWitness(f"{name.line}:{name.column}: unknown variable {name.text!r}")
        try:
            v = float(value.text)
        except ValueError:
            raise MalformedWitness(f"{value.line}:{value.column}: non-numeric value {value.text!r}") from None
        if not math.isfinite(v):
            raise MalformedWitness(f"{value.line}:{value.column}: non-finite value {value.text!r}")
        target = xs if m.group(1) == "X" else ys
        idx = int(m.group(2))
        if idx in target:
            raise MalformedWitness(f"{name.line}:{name.column}: {name.text} assigned twice")
        target[idx] = v
    n_in = d_in if d_in is not None else (max(xs) + 1 if xs else 0)
    if n_in == 0:
        raise MalformedWitness("witness assigns no input variables")
    missing = [i for i in range(n_in) if i not in xs]
    if missing:
        raise MalformedWitness(f"missing input X_{missing[0]}")
    extra = [i for i in xs if i >= n_in]
    if extra:
        raise MalformedWitness(f"X_{extra[0]} exceeds input dimension {n_in}")
    n_out = d_out if d_out is not None else (max(ys) + 1 if ys else 0)
    y = None
    if ys and n_out and all(j in ys for j in range(n_out)) and all(j < n_out for j in ys):
        y = tuple(ys[j] for j in range(n_out))
    return Witness(tuple(xs[i] for i in range(n_in)), y)


def print_witness(w: Witness) -> str:
    lines = [f"(X_{i} {v!r})" for i, v in enumerate(w.x)]
    if w.y_claimed is not None:
        lines += [f"(Y_{j} {v!r})" for j, v in enumerate(w.y_claimed)]
    return "(" + "\n ".join(lines) + ")\n"


def validate(witness: Witness, query: AdversarialQuery, net: NetworkGraph,
             tol: tuple[float, float] = (DEFAULT_TOL_IN, DEFAULT_TOL_OUT)) -> ValidationReport:
    """Re-evaluate the network at the (clamped) witness input and check each disjunct."""
    tol_in, tol_out = tol
    query.check_network(net.d_in, net.d_out)
    if len(witness.x) != net.d_in:
        raise DimensionMismatch(f"witness has {len(witness.x)} inputs, network expects {net.d_in}")
    if witness.y_claimed is not None and len(witness.y_claimed) != net.d_out:
        raise DimensionMismatch(f"witness claims {len(witness.y_claimed)} outputs, network has {net.d_out}")
    x = np.array(witness.x, dtype=np.float64)

    best = None  # (rank tuple, report fields)
    for k, d in enumerate(query.disjuncts):
        if d.is_vacuous:
            continue
        lo, hi = d.box.arrays()
        viol = float(np.max(np.maximum(np.maximum(lo - x, x - hi), 0.0)))
        inside = viol <= tol_in
        xe = np.clip(x, lo, hi) if inside else x
        y = evaluate(net, xe)
        slacks = tuple(c.slack(y) for c in d.constraints)
        ok = inside and all(s >= -tol_out for s in slacks)
        worst = min(slacks) if slacks else math.inf
        rank = (ok, inside, worst if inside else -viol)
        if best is None or rank > best[0]:
            best = (rank, k, y, viol, slacks)
        if ok:
            break
    if best is None:  # every disjunct vacuous
        y = evaluate(net, x)
        report = ValidationReport(Verdict.INVALID_INPUT, None, tuple(y), math.inf, (), tol_in, tol_out)
    else:
        (ok, inside, _), k, y, viol, slacks = best
        verdict = Verdict.VALID if ok else (Verdict.INVALID_OUTPUT if inside else Verdict.INVALID_INPUT)
        report = ValidationReport(verdict, k if ok else None, tuple(float(v) for v in y), viol,
                                  tuple(slacks), tol_in, tol_out)
    if witness.y_claimed is not None:
        ya = np.array(report.y_actual)
        yc = np.array(witness.y_claimed)
        rel = np.abs(ya - yc) / np.maximum(np.abs(ya), 1e-12)
        if np.any(rel > CLAIM_REL_TOL):
            j = int(np.argmax(rel))
            report.warnings.append(f"claimed Y_{j}={yc[j]!r} differs from evaluated {ya[j]!r}")
    return report


def validate_text(text: str, query: AdversarialQuery, net: NetworkGraph,
                  tol: tuple[float, float] = (DEFAULT_TOL_IN, DEFAULT_TOL_OUT)) -> ValidationReport:
    """Parse then validate; unparsable witnesses yield a ``Malformed`` report instead of raising."""
    try:
        w = parse_witness(text, net.d_in, net.d_out)
    except MalformedWitness as exc:
        r = ValidationReport(Verdict.MALFORMED, None, (), math.inf, (), tol[0], tol[1])
        r.warnings.append(str(exc))
        return r
    return validate(w, query, net, tol)
