"""Points, ground truth, time bonuses and normalized score tables.

Two rule sets are supported. Under 2021 rules ground truth comes from a
majority vote and "simple" SAT instances (ones the harness attack falsifies)
earn a single point. Under 2022 rules a SAT claim counts only if its witness
validates, and a validated witness decides ground truth on its own.
"""

from __future__ import annotations

import enum
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .runner import InstanceRecord, RunStatus, VerdictRecord

VALID = "Valid"


class Year(enum.Enum):
    R2021 = "2021"
    R2022 = "2022"


@dataclass(frozen=True)
class TimeBonus:
    enabled: bool = True
    fastest: int = 2
    second: int = 1
    equal_margin: float = 0.2
    small_floor: float = 1.0


@dataclass(frozen=True)
class RuleSet:
    year: Year
    correct_points: int = 10
    penalty_points: int = 100
    simple_sat_points: int = 1
    time_bonus: TimeBonus = field(default_factory=TimeBonus)

    @classmethod
    def named(cls, name: str, time_bonus: bool = True) -> "RuleSet":
        name = str(name).upper().lstrip("R")
        try:
            year = Year(name)
        except ValueError:
            raise ValueError(f"unknown rule set {name!r} (expected 2021 or 2022)") from None
        return cls(year, time_bonus=TimeBonus(enabled=time_bonus))


class Label(enum.Enum):
    SAT = "sat"
    UNSAT = "unsat"
    UNDETERMINED = "undetermined"


class Basis(enum.Enum):
    MAJORITY_VOTE = "MajorityVote"
    VALIDATED_WITNESS = "ValidatedWitness"
    ORACLE = "Oracle"


@dataclass(frozen=True)
class GroundTruth:
    benchmark: str
    index: int
    label: Label
    basis: Basis
    simple_sat: bool = False

    def __post_init__(self):
        if self.simple_sat and self.label is not Label.SAT:
            object.__setattr__(self, "simple_sat", False)


def _verdict_of(rec: VerdictRecord, witness_reports: Mapping[str, str] | None) -> str:
    if witness_reports is not None and rec.tool in witness_reports:
        return witness_reports[rec.tool]
    return rec.witness_verdict


def derive_ground_truth(records: Sequence[VerdictRecord], rules: RuleSet,
                        witness_reports: Mapping[str, str] | None = None,
                        oracle_label: str | Label | None = None, simple_sat: bool = False,
                        instance: tuple[str, int] | None = None) -> GroundTruth:
    """Decide the label of one instance from its records.

    ``witness_reports`` maps tool name to a validation verdict and overrides
    the verdict stored in the record. ``oracle_label`` overrides the vote; under
    2022 rules a validated witness still wins over it.
    """
    if instance is None:
        keys = {(r.benchmark, r.index) for r in records}
        if len(keys) > 1:
            raise ValueError(f"records span several instances: {sorted(keys)}")
        instance = keys.pop() if keys else ("", 0)
    bench, idx = instance
    oracle = oracle_label or None
    if isinstance(oracle, str):
        oracle = Label(oracle.lower())
    if oracle is Label.UNDETERMINED:
        oracle = None

    if rules.year is Year.R2022:
        if any(r.status is RunStatus.SAT and _verdict_of(r, witness_reports) == VALID for r in records):
            return GroundTruth(bench, idx, Label.SAT, Basis.VALIDATED_WITNESS, simple_sat)
        if oracle is not None:
            return GroundTruth(bench, idx, oracle, Basis.ORACLE, simple_sat)
        if any(r.status is RunStatus.UNSAT for r in records):
            return GroundTruth(bench, idx, Label.UNSAT, Basis.MAJORITY_VOTE)
        return GroundTruth(bench, idx, Label.UNDETERMINED, Basis.MAJORITY_VOTE)

    if oracle is not None:
        return GroundTruth(bench, idx, oracle, Basis.ORACLE, simple_sat)
    n_sat = sum(r.status is RunStatus.SAT for r in records)
    n_unsat = sum(r.status is RunStatus.UNSAT for r in records)
    if n_sat > n_unsat:
        label = Label.SAT
    elif n_unsat > n_sat:
        label = Label.UNSAT
    else:
        label = Label.UNDETERMINED
    return GroundTruth(bench, idx, label, Basis.MAJORITY_VOTE, simple_sat)


def score_instance(record: VerdictRecord, truth: GroundTruth, rules: RuleSet,
                   witness_verdict: str | None = None) -> int:
    """Base points for one verdict (no time bonus)."""
    st = record.status
    good, bad = rules.correct_points, -rules.penalty_points
    if rules.year is Year.R2022:
        if st is RunStatus.SAT:
            verdict = record.witness_verdict if witness_verdict is None else witness_verdict
            return good if verdict == VALID else bad
        if st is RunStatus.UNSAT:
            if truth.label is Label.SAT:
                return bad
            return good if truth.label is Label.UNSAT else 0
        return 0
    if truth.label is Label.UNDETERMINED:
        return 0
    if st is RunStatus.SAT:
        if truth.label is Label.SAT:
            return rules.simple_sat_points if truth.simple_sat else good
        return bad
    if st is RunStatus.UNSAT:
        return good if truth.label is Label.UNSAT else bad
    return 0


def equivalence_classes(times: Mapping[str, float], margin: float = 0.2, floor: float = 1.0) -> list[list[str]]:
    """Runtime classes, fastest first, under the transitive closure of "considered equal".

    Two runtimes are equal if they differ by less than ``margin`` or are both
    below ``floor``. After sorting, the closure reduces to chaining neighbours.
    """
    order = sorted(times, key=lambda t: (times[t], t))
    classes: list[list[str]] = []
    prev = None
    for tool in order:
        t = times[tool]
        if prev is not None and (abs(t - prev) < margin or (t < floor and prev < floor)):
            classes[-1].append(tool)
        else:
            classes.append([tool])
        prev = t
    return classes


def time_bonus(records: Sequence[VerdictRecord], rules: RuleSet, attempted: int | None = None) -> dict[str, int]:
    """Bonus points for the given correctly scored records of one instance.

    ``attempted`` is the number of tools that ran the instance; with fewer
    than two there is nobody to be faster than and no bonus is awarded.
    """
    tb = rules.time_bonus
    if not tb.enabled or not records or (attempted is not None and attempted < 2):
        return {}
    times = {r.tool: r.adjusted_runtime for r in records}
    classes = equivalence_classes(times, tb.equal_margin, tb.small_floor)
    out = {t: 0 for t in times}
    for t in classes[0]:
        out[t] = tb.fastest
    if len(classes) > 1:
        for t in classes[1]:
            out[t] = tb.second
    return out


@dataclass
class ScoreTable:
    rules: RuleSet
    tools: list[str]
    benchmarks: list[str]
    points: dict[tuple[str, str], int]
    max_points: dict[str, int]
    percent: dict[tuple[str, str], float]
    totals: dict[str, float]
    solved: dict[str, int]
    ranking: list[str]
    # (tool, benchmark, index) -> (base points, bonus)
    instance_points: dict[tuple[str, str, int], tuple[int, int]] = field(default_factory=dict)


def build_score_table(records: Iterable[VerdictRecord], truths: Mapping[tuple[str, int], GroundTruth],
                      rules: RuleSet, tools: Sequence[str] | None = None,
                      benchmarks: Sequence[str] | None = None) -> ScoreTable:
    records = list(records)
    tools = sorted(set(tools or ()) | {r.tool for r in records})
    benchmarks = sorted(set(benchmarks or ()) | {r.benchmark for r in records} | {b for b, _ in truths})
    by_instance: dict[tuple[str, int], list[VerdictRecord]] = defaultdict(list)
    for r in records:
        by_instance[(r.benchmark, r.index)].append(r)

    points = {(t, b): 0 for t in tools for b in benchmarks}
    solved = {t: 0 for t in tools}
    inst_pts: dict[tuple[str, str, int], tuple[int, int]] = {}
    for key in sorted(by_instance):
        recs = sorted(by_instance[key], key=lambda r: r.tool)
        truth = truths.get(key)
        if truth is None:
            truth = derive_ground_truth(recs, rules, instance=key)
        base = {r.tool: score_instance(r, truth, rules) for r in recs}
        correct = [r for r in recs if base[r.tool] > 0]
        bonus = {} if truth.label is Label.UNDETERMINED else time_bonus(correct, rules, attempted=len(recs))
        for r in recs:
            p, bo = base[r.tool], bonus.get(r.tool, 0)
            inst_pts[(r.tool, r.benchmark, r.index)] = (p, bo)
            points[(r.tool, r.benchmark)] += p + bo
            if p > 0:
                solved[r.tool] += 1

    max_points, percent = {}, {}
    for b in benchmarks:
        m = max((points[(t, b)] for t in tools), default=0)
        max_points[b] = m
        for t in tools:
            p = points[(t, b)]
            if m <= 0:
                percent[(t, b)] = 0.0
            elif p == m:
                percent[(t, b)] = 100.0
            else:
                percent[(t, b)] = 100.0 * p / m
    totals = {t: float(sum(percent[(t, b)] for b in benchmarks)) for t in tools}
    ranking = sorted(tools, key=lambda t: (-totals[t], -solved[t], t))
    return ScoreTable(rules, tools, benchmarks, points, max_points, percent, totals, solved, ranking, inst_pts)


def derive_truths(records: Iterable[VerdictRecord], instances: Iterable[InstanceRecord],
                  rules: RuleSet) -> dict[tuple[str, int], GroundTruth]:
    """Ground truth for every instance that has records or an instance entry."""
    by_instance: dict[tuple[str, int], list[VerdictRecord]] = defaultdict(list)
    for r in records:
        by_instance[(r.benchmark, r.index)].append(r)
    meta = {i.key: i for i in instances}
    out = {}
    for key in sorted(set(by_instance) | set(meta)):
        info = meta.get(key)
        out[key] = derive_ground_truth(by_instance.get(key, []), rules,
                                       oracle_label=info.oracle if info else None,
                                       simple_sat=info.simple_sat if info else False, instance=key)
    return out


def fmt6(v: float) -> str:
    """Six significant digits; negative zero prints as 0."""
    return format(float(v) + 0.0, ".6g")


def score_table_csv(table: ScoreTable) -> str:
    lines = ["tool,benchmark,points,percent"]
    for t in table.tools:
        for b in table.benchmarks:
            lines.append(f"{t},{b},{table.points[(t, b)]},{fmt6(table.percent[(t, b)])}")
    return "\n".join(lines) + "\n"


def totals_csv(table: ScoreTable) -> str:
    lines = ["rank,tool,total,solved"]
    for rank, t in enumerate(table.ranking, 1):
        lines.append(f"{rank},{t},{fmt6(table.totals[t])},{table.solved[t]}")
    return "\n".join(lines) + "\n"
