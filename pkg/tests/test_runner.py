import os
import sys
import time

import numpy as np
import psutil
import pytest

from tools import answer_tool, forever_tool, make_tool, sleep_work_tool, stubborn_answer_tool
from vnn_arena.errors import MissingFile, ToolFailure, VnnSyntaxError
from vnn_arena.netio import GraphBuilder, OpKind, save_onnx
from vnn_arena.runner import (
    InstanceRecord,
    RunStatus,
    ToolAdapter,
    VerdictRecord,
    VerdictStore,
    format_record,
    load_instances,
    load_instances_file,
    measure_overhead,
    parse_record,
    parse_result_text,
    preflight,
    run_campaign,
    run_instance,
    write_trivial_instance,
)

PROPS = {
    "feasible.vnnlib": "(declare-const X_0 Real)\n(declare-const Y_0 Real)\n"
                       "(assert (>= X_0 0.0))\n(assert (<= X_0 1.0))\n(assert (>= Y_0 0.5))\n",
    "infeasible.vnnlib": "(declare-const X_0 Real)\n(declare-const Y_0 Real)\n"
                         "(assert (>= X_0 0.0))\n(assert (<= X_0 1.0))\n(assert (>= Y_0 2.0))\n",
    "edge.vnnlib": "(declare-const X_0 Real)\n(declare-const Y_0 Real)\n"
                   "(assert (>= X_0 0.0))\n(assert (<= X_0 1.0))\n(assert (>= Y_0 1.0))\n",
}


def write_bench(d, timeout=10):
    d.mkdir(parents=True, exist_ok=True)
    b = GraphBuilder((1,))
    b.add(OpKind.DENSE, [-1], weight=np.ones((1, 1)), bias=np.zeros(1))
    save_onnx(b.build(), d / "ident.onnx")
    lines = ["# identity benchmark"]
    for name, text in PROPS.items():
        (d / name).write_text(text)
        lines.append(f"ident.onnx,{name},{timeout}")
    (d / "bench.csv").write_text("\n".join(lines) + "\n")
    return load_instances_file(d / "bench.csv")


@pytest.fixture
def rows(tmp_path):
    return write_bench(tmp_path / "bench")


@pytest.fixture
def trivial(tmp_path):
    return write_trivial_instance(tmp_path / "trivial")


# ----------------------------------------------------------------------------
# instance lists


def test_load_three_rows_in_order(rows):
    assert [r.spec_path.name for r in rows] == list(PROPS)
    assert [r.index for r in rows] == [0, 1, 2]
    assert all(r.benchmark == "bench" and r.timeout == 10.0 for r in rows)


def test_non_numeric_timeout_reports_line(tmp_path):
    text = "# header\na.onnx,b.vnnlib,10\na.onnx,b.vnnlib,ten\n"
    with pytest.raises(VnnSyntaxError) as exc:
        load_instances(text, check_files=False)
    assert exc.value.line == 3


@pytest.mark.parametrize("line", ["a.onnx,b.vnnlib", "a.onnx,b.vnnlib,0", "a.onnx,b.vnnlib,-1", "a,,3",
                                  "a.onnx,b.vnnlib,inf"])
def test_bad_rows(line):
    with pytest.raises(VnnSyntaxError):
        load_instances(line + "\n", check_files=False)


def test_missing_file(tmp_path):
    with pytest.raises(MissingFile):
        load_instances("nope.onnx,nope.vnnlib,5\n", base_dir=tmp_path)


def test_manifest_matches(tmp_path, rows):
    # manifest written alongside the fixture: (network, property, timeout)
    manifest = [("ident.onnx", "feasible.vnnlib", 10.0), ("ident.onnx", "infeasible.vnnlib", 10.0),
                ("ident.onnx", "edge.vnnlib", 10.0)]
    assert [(r.network_path.name, r.spec_path.name, r.timeout) for r in rows] == manifest
    preflight(rows)


# ----------------------------------------------------------------------------
# store


def test_record_round_trip():
    rec = VerdictRecord("t\tool", "b\\n", 3, RunStatus.SAT, 1.25, 0.25, 1.0, 10.0, 11.25, "w/x.txt", "Valid",
                        "line1\nline2\ttab")
    assert parse_record(format_record(rec)) == rec
    inst = InstanceRecord("b", 2, "n.onnx", "s.vnnlib", 30.0, True, "unsat")
    assert parse_record(format_record(inst)) == inst
    assert "\n" not in format_record(rec)


def test_store_field_order():
    line = format_record(VerdictRecord("a", "b", 0, RunStatus.UNSAT, 1.0, 0.5))
    assert [p.split("=")[0] for p in line.split("\t")] == [
        "record", "tool", "benchmark", "index", "status", "raw_runtime", "adjusted_runtime", "overhead",
        "started", "finished", "witness", "witness_verdict", "diagnostics"]


def test_unknown_field_rejected():
    with pytest.raises(VnnSyntaxError):
        parse_record("record=verdict\ttool=a\tbenchmark=b\tindex=0\tstatus=sat\traw_runtime=1\t"
                     "adjusted_runtime=1\tcolour=red")


def test_torn_last_line_ignored(tmp_path):
    store = VerdictStore(tmp_path / "s.kv")
    store.append(VerdictRecord("a", "b", 0, RunStatus.UNSAT, 1.0, 0.5))
    with open(store.path, "a") as fh:
        fh.write("record=verdict\ttool=a\tbenchmark=b\tindex=1\tstatus=uns")
    assert len(store.verdicts()) == 1
    store.append(VerdictRecord("a", "b", 2, RunStatus.SAT, 1.0, 0.5))
    assert [r.index for r in store.verdicts()] == [0, 2]


def test_corrupt_middle_line_raises(tmp_path):
    p = tmp_path / "s.kv"
    p.write_text("garbage\n" + format_record(VerdictRecord("a", "b", 0, RunStatus.UNSAT, 1.0, 0.5)) + "\n")
    with pytest.raises(VnnSyntaxError):
        VerdictStore(p).verdicts()


# ----------------------------------------------------------------------------
# result files


@pytest.mark.parametrize("data,status", [
    (b"sat\n((X_0 1))\n", RunStatus.SAT), (b"UNSAT trailing log\n", RunStatus.UNSAT),
    (b"Unknown", RunStatus.UNKNOWN), (b"timeout\n", RunStatus.TIMEOUT), (b"error\n", RunStatus.ERROR),
    (b"violated\n", RunStatus.SAT), (b"holds\n", RunStatus.UNSAT),
])
def test_parse_result(data, status):
    assert parse_result_text(data)[0] is status


def test_parse_result_garbage_quotes_200_bytes():
    data = b"x" * 500
    status, _, diag = parse_result_text(data)
    assert status is None and repr(b"x" * 200) in diag and repr(b"x" * 201) not in diag


# ----------------------------------------------------------------------------
# process supervision


def test_overhead_instant_tool(tmp_path, trivial):
    tool = sleep_work_tool(tmp_path, 0, 0)
    assert measure_overhead(tool, trivial) < 0.5
    assert tool.overhead is not None


def test_overhead_sleeping_tool(tmp_path, trivial):
    tool = sleep_work_tool(tmp_path, 2.0, 0)
    assert 1.9 <= measure_overhead(tool, trivial, repeats=1) <= 2.3


def test_overhead_failure(tmp_path, trivial):
    tool = make_tool(tmp_path, "broken", "sys.exit(3)\n")
    with pytest.raises(ToolFailure):
        measure_overhead(tool, trivial)


def test_adjusted_runtime(tmp_path, rows, trivial):
    tool = sleep_work_tool(tmp_path, 0.5, 0.5)
    oh = measure_overhead(tool, trivial)
    assert abs(oh - 0.5) <= 0.3
    rec = run_instance(tool, rows[0])
    assert rec.status is RunStatus.UNKNOWN
    assert abs(rec.adjusted_runtime - 0.5) <= 0.3
    assert rec.adjusted_runtime == max(rec.raw_runtime - oh, 0.0)


def test_adjusted_runtime_never_negative(tmp_path, rows):
    tool = sleep_work_tool(tmp_path, 0, 0)
    tool.overhead = 5.0
    assert run_instance(tool, rows[0]).adjusted_runtime == 0.0


def _gone(pid):
    try:
        return psutil.Process(pid).status() == psutil.STATUS_ZOMBIE
    except psutil.NoSuchProcess:
        return True


def with_timeout(row, timeout):
    return row.__class__(row.benchmark, row.network_path, row.spec_path, timeout, row.index)


@pytest.mark.parametrize("detach", [False, True])
def test_timeout_stops_tree(tmp_path, rows, detach):
    pid_file = tmp_path / "child.pid"
    tool = forever_tool(tmp_path, pid_file, detach=detach)
    tool.overhead = 0.0
    rec = run_instance(tool, with_timeout(rows[0], 1.0), grace=1.0)
    assert rec.status is RunStatus.TIMEOUT
    # the tool dies on SIGTERM, well before the hard kill
    assert 1.0 <= rec.raw_runtime < 1.5
    pid = int(pid_file.read_text())
    deadline = time.time() + 3
    while not _gone(pid) and time.time() < deadline:
        time.sleep(0.05)
    assert _gone(pid)


@pytest.mark.parametrize("detach", [False, True])
def test_sigterm_ignoring_tree_is_killed_after_grace(tmp_path, rows, detach):
    pid_file = tmp_path / "child.pid"
    tool = forever_tool(tmp_path, pid_file, detach=detach, ignore_term=True)
    tool.overhead = 0.0
    rec = run_instance(tool, with_timeout(rows[0], 1.0), grace=1.0)
    assert rec.status is RunStatus.TIMEOUT
    assert 2.0 <= rec.raw_runtime < 3.0
    pid = int(pid_file.read_text())
    deadline = time.time() + 3
    while not _gone(pid) and time.time() < deadline:
        time.sleep(0.05)
    assert _gone(pid)


def test_answer_during_grace_is_timeout(tmp_path, rows):
    tool = stubborn_answer_tool(tmp_path, "unsat\n", 1.5)
    tool.overhead = 0.0
    rec = run_instance(tool, with_timeout(rows[1], 1.0), grace=3.0)
    assert rec.status is RunStatus.TIMEOUT and "timeout" in rec.diagnostics
    assert rec.raw_runtime < 2.5


def test_garbage_result_is_error(tmp_path, rows):
    tool = make_tool(tmp_path, "garbage", 'open(result, "w").write("the answer is 42 " * 40)\n')
    tool.overhead = 0.0
    rec = run_instance(tool, rows[0])
    assert rec.status is RunStatus.ERROR
    assert "the answer is 42" in rec.diagnostics and len(rec.diagnostics) < 400


def test_missing_result_file_is_error(tmp_path, rows):
    tool = make_tool(tmp_path, "silent", 'sys.stderr.write("boom")\n')
    tool.overhead = 0.0
    rec = run_instance(tool, rows[0])
    assert rec.status is RunStatus.ERROR and "boom" in rec.diagnostics


def test_unstartable_command_is_error(rows):
    rec = run_instance(ToolAdapter("ghost", ["/nonexistent/tool"], overhead=0.0), rows[0])
    assert rec.status is RunStatus.ERROR and "failed to start" in rec.diagnostics


def test_canary_isolation(tmp_path, rows, trivial):
    canary = make_tool(tmp_path, "canary", """
        if os.path.exists("canary.marker"):
            open(result, "w").write("error\\n")
        else:
            open("canary.marker", "w").write("x")
            open(result, "w").write("unknown\\n")
    """)
    store = VerdictStore(tmp_path / "store.kv")
    run_campaign([canary], rows, store, trivial)
    assert [r.status for r in store.verdicts()] == [RunStatus.UNKNOWN] * 3


def test_sat_witness_copied_and_validated(tmp_path, rows):
    tool = answer_tool(tmp_path, "oracle", {"feasible.vnnlib": "sat\n((X_0 0.75) (Y_0 0.75))\n",
                                            "infeasible.vnnlib": "sat\n((X_0 0.5))\n"})
    tool.overhead = 0.0
    wdir = tmp_path / "w"
    good = run_instance(tool, rows[0], wdir)
    assert good.status is RunStatus.SAT and good.witness_verdict == "Valid"
    assert (wdir / os.path.basename(good.witness_path)).read_text().startswith("((X_0 0.75)")
    bad = run_instance(tool, rows[1], wdir)
    assert bad.status is RunStatus.SAT and bad.witness_verdict == "InvalidOutput"
    kept = run_instance(tool, rows[0])
    assert kept.witness_path == "" and "not retained" in kept.diagnostics


def test_sat_without_witness(tmp_path, rows):
    tool = answer_tool(tmp_path, "bare", {"feasible.vnnlib": "sat\n"})
    tool.overhead = 0.0
    rec = run_instance(tool, rows[0], tmp_path / "w")
    assert rec.status is RunStatus.SAT and rec.witness_verdict == "Malformed" and rec.diagnostics


def test_reference_verifier_as_adapter(tmp_path, rows, trivial):
    tool = ToolAdapter("ref", [sys.executable, "-m", "vnn_arena", "verify"])
    store = VerdictStore(tmp_path / "store.kv")
    run_campaign([tool], rows, store, trivial)
    by_spec = {r.index: r for r in store.verdicts()}
    assert by_spec[0].status is RunStatus.SAT and by_spec[0].witness_verdict == "Valid"
    assert (store.path.parent / by_spec[0].witness_path).is_file()
    assert by_spec[1].status is RunStatus.UNSAT
    assert by_spec[2].status is RunStatus.SAT


# ----------------------------------------------------------------------------
# campaigns


def test_two_tools_three_instances(tmp_path, rows, trivial):
    tools = [sleep_work_tool(tmp_path, 0, 0.1, "a"), sleep_work_tool(tmp_path, 0, 0.1, "b")]
    store = VerdictStore(tmp_path / "store.kv")
    summary = run_campaign(tools, rows, store, trivial)
    recs = store.verdicts()
    assert len(recs) == len(summary.executed) == 6
    assert [r.tool for r in recs] == ["a"] * 3 + ["b"] * 3
    spans = sorted((r.started, r.finished) for r in recs)
    for (s1, f1), (s2, f2) in zip(spans, spans[1:]):
        assert f1 <= s2


def test_resume_completes_only_missing(tmp_path, rows, trivial):
    tools = [sleep_work_tool(tmp_path, 0, 0, "a"), sleep_work_tool(tmp_path, 0, 0, "b")]
    store = VerdictStore(tmp_path / "store.kv")
    run_campaign(tools[:1], rows[:2], store, trivial)
    summary = run_campaign(tools, rows, store, trivial)
    assert summary.skipped == 2 and len(summary.executed) == 4
    assert sorted(r.key for r in store.verdicts()) == sorted((t, "bench", i) for t in "ab" for i in range(3))
    again = run_campaign(tools, rows, store, trivial)
    assert again.executed == [] and again.skipped == 6


def test_scripted_scenario(tmp_path, rows, trivial):
    answers = {"feasible.vnnlib": "sat\n((X_0 0.9))\n", "infeasible.vnnlib": "unsat\n", "edge.vnnlib": "garbage\n"}
    tools = [answer_tool(tmp_path, "scripted", answers), sleep_work_tool(tmp_path, 0, 0, "idle")]
    store = VerdictStore(tmp_path / "store.kv")
    run_campaign(tools, rows, store, trivial)
    got = {(r.tool, r.index): (r.status.value, r.witness_verdict) for r in store.verdicts()}
    assert got == {
        ("scripted", 0): ("sat", "Valid"), ("scripted", 1): ("unsat", ""), ("scripted", 2): ("error", ""),
        ("idle", 0): ("unknown", ""), ("idle", 1): ("unknown", ""), ("idle", 2): ("unknown", ""),
    }
