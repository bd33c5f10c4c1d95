"""Run entrant tools over instance lists and persist their verdicts.

Tools follow the adapter contract::

    run_command <network> <property> <timeout> <result_file>

Line 1 of the result file is one of ``sat``/``unsat``/``unknown``/``timeout``/
``error`` (case-insensitive, first token wins); for ``sat`` the remaining
lines hold the witness. Every instance runs in a fresh process, in a fresh
scratch directory, strictly one at a time.

The verdict store is append-only text, one record per line, tab-separated
``key=value`` fields in a fixed order (backslash escapes for tab, newline,
carriage return and backslash). Two record kinds exist::

    record=instance benchmark index network spec timeout simple_sat oracle
    record=verdict  tool benchmark index status raw_runtime adjusted_runtime
                    overhead started finished witness witness_verdict diagnostics
"""

from __future__ import annotations

import enum
import logging
import os
import shlex
import shutil
import signal
import statistics
import subprocess
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import psutil

from .errors import ArenaError, MissingFile, ToolFailure, VnnSyntaxError

log = logging.getLogger(__name__)

GRACE_SECONDS = 5.0
QUOTE_BYTES = 200
WORKDIR_ENV = "VNN_ARENA_WORKDIR"

_ALIASES = {"violated": "sat", "holds": "unsat"}


class RunStatus(enum.Enum):
    SAT = "sat"
    UNSAT = "unsat"
    UNKNOWN = "unknown"
    TIMEOUT = "timeout"
    ERROR = "error"


@dataclass(frozen=True)
class InstanceRow:
    benchmark: str
    network_path: Path
    spec_path: Path
    timeout: float
    index: int = 0


@dataclass
class ToolAdapter:
    name: str
    run_command: tuple[str, ...]
    prepare_command: tuple[str, ...] | None = None
    overhead: float | None = None

    def __post_init__(self):
        if isinstance(self.run_command, str):
            self.run_command = tuple(shlex.split(self.run_command))
        self.run_command = tuple(str(a) for a in self.run_command)
        if isinstance(self.prepare_command, str):
            self.prepare_command = tuple(shlex.split(self.prepare_command))
        if not self.run_command:
            raise ValueError(f"tool {self.name!r} has an empty run command")
        if not self.name or any(c in self.name for c in "\t\n/\\"):
            raise ValueError(f"bad tool name {self.name!r}")

    def prepare(self) -> None:
        if self.prepare_command:
            proc = subprocess.run(list(self.prepare_command), capture_output=True, text=True)
            if proc.returncode != 0:
                raise ToolFailure(f"{self.name}: prepare failed ({proc.returncode}): {proc.stderr[-QUOTE_BYTES:]}")


@dataclass
class VerdictRecord:
    tool: str
    benchmark: str
    index: int
    status: RunStatus
    raw_runtime: float
    adjusted_runtime: float
    overhead: float = 0.0
    started: float = 0.0
    finished: float = 0.0
    witness_path: str = ""
    witness_verdict: str = ""
    diagnostics: str = ""

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.tool, self.benchmark, self.index)


@dataclass
class InstanceRecord:
    benchmark: str
    index: int
    network: str = ""
    spec: str = ""
    timeout: float = 0.0
    simple_sat: bool = False
    oracle: str = ""

    @property
    def key(self) -> tuple[str, int]:
        return (self.benchmark, self.index)


# ----------------------------------------------------------------------------
# verdict store

_VERDICT_FIELDS = ("tool", "benchmark", "index", "status", "raw_runtime", "adjusted_runtime", "overhead",
                   "started", "finished", "witness", "witness_verdict", "diagnostics")
_INSTANCE_FIELDS = ("benchmark", "index", "network", "spec", "timeout", "simple_sat", "oracle")


def _escape(s: str) -> str:
    return s.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n").replace("\r", "\\r")


def _unescape(s: str) -> str:
    out, i = [], 0
    while i < len(s):
        ch = s[i]
        if ch == "\\" and i + 1 < len(s):
            out.append({"t": "\t", "n": "\n", "r": "\r", "\\": "\\"}.get(s[i + 1], s[i + 1]))
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def format_record(rec) -> str:
    if isinstance(rec, VerdictRecord):
        vals = (rec.tool, rec.benchmark, rec.index, rec.status.value, repr(float(rec.raw_runtime)),
                repr(float(rec.adjusted_runtime)), repr(float(rec.overhead)), repr(float(rec.started)),
                repr(float(rec.finished)), rec.witness_path, rec.witness_verdict, rec.diagnostics)
        pairs = zip(_VERDICT_FIELDS, vals)
        kind = "verdict"
    else:
        vals = (rec.benchmark, rec.index, rec.network, rec.spec, repr(float(rec.timeout)),
                "1" if rec.simple_sat else "0", rec.oracle)
        pairs = zip(_INSTANCE_FIELDS, vals)
        kind = "instance"
    return "\t".join([f"record={kind}"] + [f"{k}={_escape(str(v))}" for k, v in pairs])


def parse_record(line: str, lineno: int = 0):
    fields = {}
    for part in line.rstrip("\n").split("\t"):
        if "=" not in part:
            raise VnnSyntaxError(f"store field without '=': {part[:40]!r}", lineno)
        k, v = part.split("=", 1)
        fields[k] = _unescape(v)
    kind = fields.pop("record", None)
    try:
        if kind == "verdict":
            _check_keys(fields, _VERDICT_FIELDS, lineno)
            return VerdictRecord(
                tool=fields["tool"], benchmark=fields["benchmark"], index=int(fields["index"]),
                status=RunStatus(fields["status"].lower()), raw_runtime=float(fields["raw_runtime"]),
                adjusted_runtime=float(fields["adjusted_runtime"]), overhead=float(fields.get("overhead", 0) or 0),
                started=float(fields.get("started", 0) or 0), finished=float(fields.get("finished", 0) or 0),
                witness_path=fields.get("witness", ""), witness_verdict=fields.get("witness_verdict", ""),
                diagnostics=fields.get("diagnostics", ""))
        if kind == "instance":
            _check_keys(fields, _INSTANCE_FIELDS, lineno)
            return InstanceRecord(
                benchmark=fields["benchmark"], index=int(fields["index"]), network=fields.get("network", ""),
                spec=fields.get("spec", ""), timeout=float(fields.get("timeout", 0) or 0),
                simple_sat=fields.get("simple_sat", "0") in ("1", "true", "True"),
                oracle=fields.get("oracle", "").lower())
    except (KeyError, ValueError) as exc:
        raise VnnSyntaxError(f"bad store record: {exc}", lineno) from None
    raise VnnSyntaxError(f"unknown record kind {kind!r}", lineno)


def _check_keys(fields: dict, allowed: tuple[str, ...], lineno: int) -> None:
    extra = set(fields) - set(allowed)
    if extra:
        raise VnnSyntaxError(f"unknown store field {sorted(extra)[0]!r}", lineno)


class VerdictStore:
    """Append-only record file; safe to read while a campaign appends to it."""

    def __init__(self, path):
        self.path = Path(path)

    @property
    def witness_dir(self) -> Path:
        return self.path.parent / (self.path.stem + "_witnesses")

    def _read(self):
        if not self.path.exists():
            return []
        text = self.path.read_text(encoding="utf-8")
        lines = text.split("\n")
        out = []
        if not text.endswith("\n") and lines[-1].strip():
            # a torn final line from an interrupted append; the next append drops it
            log.warning("ignoring incomplete last line of %s", self.path)
            lines = lines[:-1]
        for n, line in enumerate(lines, 1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            out.append(parse_record(line, n))
        return out

    def verdicts(self) -> list[VerdictRecord]:
        return [r for r in self._read() if isinstance(r, VerdictRecord)]

    def instances(self) -> list[InstanceRecord]:
        return [r for r in self._read() if isinstance(r, InstanceRecord)]

    def done_keys(self) -> set[tuple[str, str, int]]:
        return {r.key for r in self.verdicts()}

    def append(self, rec) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a+b") as fh:
            size = fh.seek(0, os.SEEK_END)
            if size > 0:
                fh.seek(-1, os.SEEK_END)
                if fh.read(1) != b"\n":
                    # drop the torn tail of an interrupted append
                    fh.seek(0)
                    data = fh.read()
                    fh.truncate(data.rfind(b"\n") + 1)
                    fh.seek(0, os.SEEK_END)
            fh.write((format_record(rec) + "\n").encode("utf-8"))
            fh.flush()
            os.fsync(fh.fileno())


# ----------------------------------------------------------------------------
# instance lists


def load_instances(csv_text: str, benchmark: str = "default", base_dir=None,
                   check_files: bool = True) -> list[InstanceRow]:
    """Parse ``network_path,spec_path,timeout_seconds`` lines; ``#`` starts a comment."""
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    rows = []
    for lineno, raw in enumerate(csv_text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 3 or not all(parts):
            raise VnnSyntaxError(f"expected network,spec,timeout but got {len(parts)} fields", lineno)
        try:
            timeout = float(parts[2])
        except ValueError:
            raise VnnSyntaxError(f"non-numeric timeout {parts[2]!r}", lineno) from None
        if not timeout > 0 or timeout == float("inf"):
            raise VnnSyntaxError(f"timeout must be positive and finite, got {parts[2]}", lineno)
        net, spec = base / parts[0], base / parts[1]
        if check_files:
            for p in (net, spec):
                if not p.is_file():
                    raise MissingFile(f"line {lineno}: {p} does not exist")
        rows.append(InstanceRow(benchmark, net, spec, timeout, len(rows)))
    return rows


def load_instances_file(path, benchmark: str | None = None) -> list[InstanceRow]:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"{path} does not exist")
    return load_instances(path.read_text(), benchmark or path.stem, path.parent)


def preflight(rows: Iterable[InstanceRow]) -> None:
    """Parse every referenced network and property; raises the first domain error."""
    from .netio import load_network
    from .speclang import load_vnnlib

    for row in rows:
        net = load_network(row.network_path)
        load_vnnlib(row.spec_path).check_network(net.d_in, net.d_out)


# ----------------------------------------------------------------------------
# process supervision


def workdir() -> Path:
    root = Path(os.environ.get(WORKDIR_ENV) or Path(tempfile.gettempdir()) / "vnn-arena")
    root.mkdir(parents=True, exist_ok=True)
    return root


def _descendants(pid: int) -> list[psutil.Process]:
    try:
        return psutil.Process(pid).children(recursive=True)
    except psutil.NoSuchProcess:
        return []


def _signal_tree(pid: int, procs: list[psutil.Process], sig: int) -> None:
    try:
        os.killpg(pid, sig)
    except (ProcessLookupError, PermissionError):
        pass
    for p in procs:
        try:
            p.send_signal(sig)
        except psutil.NoSuchProcess:
            pass


def _stop_tree(proc: subprocess.Popen, grace: float) -> None:
    """SIGTERM the child's session and descendants, then SIGKILL whatever is left after ``grace`` seconds.

    Descendants are snapshotted before signalling so that helpers which
    started their own session are caught as well.
    """
    kids = _descendants(proc.pid)
    _signal_tree(proc.pid, kids, signal.SIGTERM)
    try:
        proc.wait(timeout=grace)
    except subprocess.TimeoutExpired:
        pass
    seen = {k.pid: k for k in kids + _descendants(proc.pid)}
    kids = list(seen.values())
    _signal_tree(proc.pid, kids, signal.SIGKILL)
    proc.wait()
    _await_gone(kids, 2.0)


def _await_gone(procs: list[psutil.Process], timeout: float) -> None:
    # a zombie counts as gone: it holds no resources and its reaper may not be us
    deadline = time.monotonic() + timeout
    live = list(procs)
    while live and time.monotonic() < deadline:
        still = []
        for p in live:
            try:
                if p.status() != psutil.STATUS_ZOMBIE:
                    still.append(p)
            except psutil.NoSuchProcess:
                pass
        live = still
        if live:
            time.sleep(0.01)


def _reap_session(pid: int) -> None:
    # background helpers left behind by a tool that already exited
    try:
        os.killpg(pid, signal.SIGKILL)
    except (ProcessLookupError, PermissionError):
        pass


def _tail(path: Path, n: int = QUOTE_BYTES) -> str:
    try:
        data = path.read_bytes()
    except OSError:
        return ""
    return data[-n:].decode("utf-8", "replace").strip()


def parse_result_text(data: bytes) -> tuple[RunStatus | None, str, str]:
    """Returns ``(status or None if unparsable, witness_text, diagnostics)``."""
    text = data.decode("utf-8", "replace")
    first, _, rest = text.partition("\n")
    tokens = first.split()
    token = tokens[0].lower() if tokens else ""
    token = _ALIASES.get(token, token)
    try:
        status = RunStatus(token)
    except ValueError:
        return None, "", f"unparsable result file: {data[:QUOTE_BYTES]!r}"
    return status, rest if status is RunStatus.SAT else "", ""


def _validate_witness(row: InstanceRow, text: str, tol=None) -> str:
    from .netio import load_network
    from .speclang import load_vnnlib
    from .witness import DEFAULT_TOL_IN, DEFAULT_TOL_OUT, validate_text

    try:
        net = load_network(row.network_path)
        query = load_vnnlib(row.spec_path)
        return validate_text(text, query, net, tol or (DEFAULT_TOL_IN, DEFAULT_TOL_OUT)).verdict.value
    except ArenaError as exc:
        log.warning("witness validation failed for %s: %s", row.spec_path, exc)
        return "Malformed"


def run_instance(tool: ToolAdapter, row: InstanceRow, witness_dir=None,
                 grace: float = GRACE_SECONDS, validate: bool = True, tol=None) -> VerdictRecord:
    """Run one instance in a fresh process; never raises for tool misbehaviour."""
    overhead = tool.overhead or 0.0
    scratch = Path(tempfile.mkdtemp(prefix=f"{tool.name}-", dir=workdir()))
    result_file = scratch / "result.txt"
    cmd = list(tool.run_command) + [str(Path(row.network_path).resolve()), str(Path(row.spec_path).resolve()),
                                    repr(float(row.timeout)), str(result_file)]
    rec = VerdictRecord(tool.name, row.benchmark, row.index, RunStatus.ERROR, 0.0, 0.0, overhead)
    try:
        with open(scratch / "stdout.log", "wb") as out, open(scratch / "stderr.log", "wb") as err:
            rec.started = time.time()
            t0 = time.perf_counter()
            try:
                proc = subprocess.Popen(cmd, cwd=scratch, stdin=subprocess.DEVNULL, stdout=out, stderr=err,
                                        start_new_session=True)
            except OSError as exc:
                rec.finished = time.time()
                rec.diagnostics = f"failed to start {cmd[0]!r}: {exc}"
                return rec
            timed_out = False
            try:
                proc.wait(timeout=row.timeout + overhead)
            except subprocess.TimeoutExpired:
                timed_out = True
                _stop_tree(proc, grace)
            raw = time.perf_counter() - t0
            if not timed_out:
                _reap_session(proc.pid)
            rec.finished = time.time()
        rec.raw_runtime = raw
        rec.adjusted_runtime = max(raw - overhead, 0.0)
        if timed_out:
            rec.status = RunStatus.TIMEOUT
            rec.diagnostics = f"terminated after exceeding the {row.timeout:g} s timeout"
            return rec
        if not result_file.exists():
            rec.diagnostics = f"no result file (exit code {proc.returncode}); stderr: {_tail(scratch / 'stderr.log')}"
            return rec
        status, witness_text, diag = parse_result_text(result_file.read_bytes())
        if status is None:
            rec.diagnostics = diag
            return rec
        rec.status = status
        if raw > row.timeout + overhead and status in (RunStatus.SAT, RunStatus.UNSAT, RunStatus.UNKNOWN):
            rec.status = RunStatus.TIMEOUT
            rec.diagnostics = f"answered {status.value} after the {row.timeout:g} s timeout"
            return rec
        if status is RunStatus.SAT:
            if not witness_text.strip():
                rec.diagnostics = "sat reported without a witness"
                rec.witness_verdict = "Malformed"
            else:
                if witness_dir is not None:
                    wdir = Path(witness_dir)
                    wdir.mkdir(parents=True, exist_ok=True)
                    wpath = wdir / f"{tool.name}__{row.benchmark}__{row.index}.txt"
                    wpath.write_text(witness_text)
                    rec.witness_path = str(wpath)
                else:
                    rec.diagnostics = "witness not retained (no witness directory)"
                if validate:
                    rec.witness_verdict = _validate_witness(row, witness_text, tol)
        elif status is RunStatus.ERROR:
            rec.diagnostics = f"tool reported error; stderr: {_tail(scratch / 'stderr.log')}"
        return rec
    finally:
        shutil.rmtree(scratch, ignore_errors=True)


def measure_overhead(tool: ToolAdapter, trivial: InstanceRow, repeats: int = 3) -> float:
    """Median raw runtime on a trivial instance; stored on the adapter."""
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    saved, tool.overhead = tool.overhead, 0.0
    times = []
    try:
        for _ in range(repeats):
            rec = run_instance(tool, trivial, validate=False)
            if rec.status in (RunStatus.ERROR, RunStatus.TIMEOUT):
                raise ToolFailure(f"{tool.name} failed on the trivial instance: {rec.status.value} {rec.diagnostics}")
            times.append(rec.raw_runtime)
    except ToolFailure:
        tool.overhead = saved
        raise
    tool.overhead = statistics.median(times)
    return tool.overhead


TRIVIAL_PROPERTY = """; trivial overhead probe: identity network, satisfiable
(declare-const X_0 Real)
(declare-const Y_0 Real)
(assert (>= X_0 0.0))
(assert (<= X_0 1.0))
(assert (>= Y_0 0.5))
"""


def write_trivial_instance(directory, timeout: float = 60.0) -> InstanceRow:
    """A one-neuron identity network plus a satisfiable property."""
    import numpy as np

    from .netio import GraphBuilder, OpKind, save_onnx

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    b = GraphBuilder((1,))
    b.add(OpKind.DENSE, [-1], weight=np.ones((1, 1)), bias=np.zeros(1))
    net_path, spec_path = directory / "trivial.onnx", directory / "trivial.vnnlib"
    save_onnx(b.build(), net_path)
    spec_path.write_text(TRIVIAL_PROPERTY)
    return InstanceRow("trivial", net_path, spec_path, timeout, 0)


# ----------------------------------------------------------------------------
# campaigns


@dataclass
class CampaignSummary:
    executed: list[VerdictRecord] = field(default_factory=list)
    skipped: int = 0


def annotate_instances(rows: Sequence[InstanceRow], store: VerdictStore, seed: int = 0,
                       oracle_budget: float | None = None) -> None:
    """Record per-instance metadata: the harness attack's simple-SAT tag, and optionally an oracle label."""
    from .netio import load_network
    from .refverify import VerifierConfig, pgd_attack, verify
    from .speclang import load_vnnlib
    from .witness import validate

    have = {r.key for r in store.instances()}
    for row in rows:
        if (row.benchmark, row.index) in have:
            continue
        net = load_network(row.network_path)
        query = load_vnnlib(row.spec_path)
        w = pgd_attack(net, query, seed=seed)
        simple = w is not None and validate(w, query, net).valid
        oracle = ""
        if oracle_budget is not None:
            outcome = verify(net, query, VerifierConfig(time_budget=oracle_budget, seed=seed))
            oracle = "" if outcome.status.value == "unknown" else outcome.status.value
        store.append(InstanceRecord(row.benchmark, row.index, str(row.network_path), str(row.spec_path),
                                    row.timeout, simple, oracle))


def run_campaign(tools: Sequence[ToolAdapter], rows: Sequence[InstanceRow], store: VerdictStore,
                 trivial: InstanceRow | None = None, grace: float = GRACE_SECONDS,
                 tol=None) -> CampaignSummary:
    """Strictly sequential: one tool at a time over all instances; completed pairs are skipped."""
    summary = CampaignSummary()
    done = store.done_keys()
    for tool in tools:
        todo = [r for r in rows if (tool.name, r.benchmark, r.index) not in done]
        summary.skipped += len(rows) - len(todo)
        if not todo:
            continue
        if tool.overhead is None:
            if trivial is None:
                raise ToolFailure(f"{tool.name}: overhead not measured and no trivial instance given")
            tool.prepare()
            measure_overhead(tool, trivial)
            log.info("%s overhead %.3f s", tool.name, tool.overhead)
        for row in todo:
            rec = run_instance(tool, row, store.witness_dir, grace=grace, tol=tol)
            if rec.witness_path:
                rec.witness_path = os.path.relpath(rec.witness_path, store.path.parent)
            store.append(rec)
            summary.executed.append(rec)
            log.info("%s %s#%d -> %s (%.3f s)", tool.name, row.benchmark, row.index, rec.status.value,
                     rec.raw_runtime)
    return summary
