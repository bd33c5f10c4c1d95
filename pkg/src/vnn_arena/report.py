"""Plot-ready cactus data, score tables and per-benchmark audit files.

Everything written here is a pure function of its inputs: tools, benchmarks
and instances are emitted in sorted order and reals use six significant
digits, so regenerating from the same store yields identical bytes.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .runner import RunStatus, VerdictRecord
from .scoring import GroundTruth, Label, RuleSet, ScoreTable, fmt6, score_instance, score_table_csv, totals_csv


@dataclass
class CactusSeries:
    tool: str
    points: list[tuple[int, float]] = field(default_factory=list)

    def is_monotone(self) -> bool:
        counts = [c for c, _ in self.points]
        times = [t for _, t in self.points]
        return counts == list(range(1, len(counts) + 1)) and all(a <= b for a, b in zip(times, times[1:]))


def _solved(rec: VerdictRecord, truth: GroundTruth | None, rules: RuleSet | None) -> bool:
    if truth is None:
        return False
    if rules is not None:
        return score_instance(rec, truth, rules) > 0
    return ((rec.status is RunStatus.SAT and truth.label is Label.SAT)
            or (rec.status is RunStatus.UNSAT and truth.label is Label.UNSAT))


def cactus_data(records: Iterable[VerdictRecord], truths: Mapping[tuple[str, int], GroundTruth],
                rules: RuleSet | None = None, tools: Sequence[str] = ()) -> list[CactusSeries]:
    """Per tool, cumulative solved count against ascending adjusted runtime.

    Without ``rules`` an answer counts when it matches the ground-truth label;
    with ``rules`` it counts when it earns positive base points.
    """
    times: dict[str, list[float]] = defaultdict(list)
    names = set(tools)
    for r in records:
        names.add(r.tool)
        if _solved(r, truths.get((r.benchmark, r.index)), rules):
            times[r.tool].append(r.adjusted_runtime)
    out = []
    for tool in sorted(names):
        ts = sorted(times[tool])
        out.append(CactusSeries(tool, [(k, t) for k, t in enumerate(ts, 1)]))
    return out


def cactus_csv(series: CactusSeries) -> str:
    return "count,time\n" + "".join(f"{c},{fmt6(t)}\n" for c, t in series.points)


def _text_table(header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(x) for x in col) for col in zip(header, *rows)]
    fmt = lambda cells: "  ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(cells, widths)))
    return "\n".join([fmt(header).rstrip()] + [fmt(r).rstrip() for r in rows]) + "\n"


def _csv_to_text(csv_text: str) -> str:
    lines = csv_text.rstrip("\n").split("\n")
    return _text_table(lines[0].split(","), [ln.split(",") for ln in lines[1:]])


def audit_text(benchmark: str, records: Iterable[VerdictRecord], truths: Mapping[tuple[str, int], GroundTruth],
               table: ScoreTable | None = None) -> str:
    """Per-instance ground truth, each tool's verdict, runtime, points and witness outcome."""
    by_index: dict[int, list[VerdictRecord]] = defaultdict(list)
    for r in records:
        if r.benchmark == benchmark:
            by_index[r.index].append(r)
    indices = sorted(set(by_index) | {i for b, i in truths if b == benchmark})
    lines = [f"benchmark {benchmark}"]
    for i in indices:
        t = truths.get((benchmark, i))
        if t is None:
            lines.append(f"instance {i} truth=undetermined basis=none simple_sat=0")
        else:
            lines.append(f"instance {i} truth={t.label.value} basis={t.basis.value} simple_sat={int(t.simple_sat)}")
        for r in sorted(by_index[i], key=lambda r: r.tool):
            base, bonus = (table.instance_points.get((r.tool, benchmark, i), (0, 0)) if table else (0, 0))
            lines.append(f"  {r.tool} status={r.status.value} runtime={fmt6(r.adjusted_runtime)} "
                         f"points={base} bonus={bonus} witness={r.witness_verdict or '-'}")
    return "\n".join(lines) + "\n"


def emit_reports(table: ScoreTable, cactus: Sequence[CactusSeries], out_dir, fmt: str = "csv",
                 records: Sequence[VerdictRecord] = (),
                 truths: Mapping[tuple[str, int], GroundTruth] | None = None) -> list[Path]:
    """Write cactus, score, totals and audit files; returns the paths written."""
    if fmt not in ("csv", "text"):
        raise ValueError(f"unknown report format {fmt!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ext = "csv" if fmt == "csv" else "txt"
    conv = (lambda s: s) if fmt == "csv" else _csv_to_text
    files: dict[str, str] = {}
    for s in cactus:
        files[f"cactus_{s.tool}.{ext}"] = conv(cactus_csv(s))
    files[f"scores.{ext}"] = conv(score_table_csv(table))
    files[f"totals.{ext}"] = conv(totals_csv(table))
    if truths is not None:
        for b in table.benchmarks:
            files[f"audit_{b}.txt"] = audit_text(b, records, truths, table)
    written = []
    for name in sorted(files):
        path = out / name
        path.write_bytes(files[name].encode("utf-8"))
        written.append(path)
    return written
