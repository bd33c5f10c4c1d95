"""``vnn-arena`` command line.

Exit codes: 0 on success, 1 on domain errors (message on stderr), 2 on usage
errors. ``verify`` follows the runner's adapter contract, so the harness can
register itself as an ordinary entrant.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .errors import ArenaError

log = logging.getLogger("vnn_arena")


def _verifier_config(args, timeout: float | None = None):
    from .config import load_config
    from .refverify import VerifierConfig

    if getattr(args, "config", None):
        cfg = load_config(args.config).verifier
        cfg.seed = args.seed
    else:
        cfg = VerifierConfig(seed=args.seed)
    if timeout is not None:
        # leave headroom for process start-up and result writing
        cfg.time_budget = max(min(cfg.time_budget, 0.9 * timeout), 0.05)
    return cfg


def cmd_inspect(args) -> int:
    from .netio import load_network
    from .speclang import load_vnnlib

    net = query = None
    for p in args.paths:
        if Path(p).suffix.lower() == ".vnnlib":
            query = load_vnnlib(p)
            n_con = sum(len(d.constraints) for d in query.disjuncts)
            print(f"{p}: property {query.num_inputs} inputs, {query.num_outputs} outputs, "
                  f"{len(query.disjuncts)} disjuncts, {n_con} output constraints")
        else:
            net = load_network(p)
            print(f"{p}:")
            print(net.summary())
    if net is not None and query is not None:
        query.check_network(net.d_in, net.d_out)
        print("network and property are compatible")
    return 0


def cmd_verify(args) -> int:
    from .netio import evaluate, load_network
    from .refverify import Status, verify
    from .speclang import load_vnnlib
    from .witness import Witness, print_witness

    if not args.timeout > 0:
        raise ArenaError("timeout must be positive")
    net = load_network(args.network)
    query = load_vnnlib(args.property)
    outcome = verify(net, query, _verifier_config(args, args.timeout))
    text = outcome.status.value + "\n"
    if outcome.status is Status.SAT:
        y = evaluate(net, outcome.witness.x)
        text += print_witness(Witness(outcome.witness.x, tuple(y)))
    Path(args.result_file).write_text(text)
    print(outcome.status.value)
    st = outcome.stats
    log.info("subproblems=%d attack_iterations=%d elapsed=%.3f %s", st.subproblems, st.attack_iterations,
             st.elapsed, st.reason)
    return 0


def cmd_falsify(args) -> int:
    from .netio import evaluate, load_network
    from .refverify import AttackConfig, pgd_attack
    from .speclang import load_vnnlib
    from .witness import Witness, print_witness

    net = load_network(args.network)
    query = load_vnnlib(args.property)
    cfg = AttackConfig(steps=args.steps, restarts=args.restarts)
    w = pgd_attack(net, query, cfg, seed=args.seed)
    if w is None:
        print("unknown")
        return 0
    text = print_witness(Witness(w.x, tuple(evaluate(net, w.x))))
    if args.out:
        Path(args.out).write_text(text)
        print("sat")
    else:
        sys.stdout.write("sat\n" + text)
    return 0


def cmd_validate(args) -> int:
    from .netio import load_network
    from .speclang import load_vnnlib
    from .witness import validate_text

    net = load_network(args.network)
    query = load_vnnlib(args.property)
    text = Path(args.witness).read_text()
    first, _, rest = text.partition("\n")
    if first.strip().lower() in ("sat", "violated"):
        # a whole result file as written by ``verify``
        text = rest
    report = validate_text(text, query, net, (args.tol_in, args.tol_out))
    sys.stdout.write(report.to_text())
    return 0 if report.valid else 1


def cmd_overhead(args) -> int:
    from .runner import ToolAdapter, measure_overhead, workdir, write_trivial_instance

    tool = ToolAdapter(args.name, args.tool_cmd)
    trivial = write_trivial_instance(workdir() / "trivial")
    print(repr(measure_overhead(tool, trivial, args.repeats)))
    return 0


def _campaign_setup(args):
    from .config import load_config
    from .runner import ToolAdapter, load_instances_file

    cfg = load_config(args.config) if args.config else None
    tools = list(cfg.tools) if cfg else []
    for spec in args.tool or []:
        name, sep, cmd = spec.partition("=")
        if not sep or not cmd:
            raise ArenaError(f"--tool expects NAME=COMMAND, got {spec!r}")
        tools.append(ToolAdapter(name, cmd))
    rows = []
    for decl in (cfg.benchmarks if cfg else []):
        rows += load_instances_file(decl.instances, decl.name)
    for path in args.instances or []:
        rows += load_instances_file(path)
    return cfg, tools, rows


def cmd_run(args) -> int:
    from .runner import VerdictStore, annotate_instances, preflight, run_campaign, workdir, write_trivial_instance

    cfg, tools, rows = _campaign_setup(args)
    if cfg and cfg.workdir:
        os.environ["VNN_ARENA_WORKDIR"] = str(cfg.workdir)
    store_path = args.store or (cfg.store if cfg else None)
    if store_path is None:
        raise ArenaError("no verdict store given (--store or config 'store')")
    if not tools or not rows:
        raise ArenaError("a campaign needs at least one tool and one instance")
    preflight(rows)
    store = VerdictStore(store_path)
    oracle = args.oracle_budget if args.oracle_budget is not None else (cfg.oracle_budget if cfg else None)
    annotate_instances(rows, store, seed=args.seed, oracle_budget=oracle)
    trivial = write_trivial_instance(workdir() / "trivial")
    summary = run_campaign(tools, rows, store, trivial, tol=cfg.tol if cfg else None)
    counts: dict[str, int] = {}
    for r in summary.executed:
        counts[r.status.value] = counts.get(r.status.value, 0) + 1
    parts = " ".join(f"{k}={v}" for k, v in sorted(counts.items()))
    print(f"executed {len(summary.executed)} skipped {summary.skipped} {parts}".rstrip())
    return 0


def _load_scored(args):
    from .runner import VerdictStore
    from .scoring import RuleSet, build_score_table, derive_truths

    path = Path(args.store)
    if not path.is_file():
        from .errors import MissingFile
        raise MissingFile(f"{path} does not exist")
    store = VerdictStore(path)
    rules = RuleSet.named(args.rules, time_bonus=not args.no_time_bonus)
    records = store.verdicts()
    truths = derive_truths(records, store.instances(), rules)
    table = build_score_table(records, truths, rules)
    return rules, records, truths, table


def cmd_score(args) -> int:
    from .scoring import score_table_csv, totals_csv

    _, _, _, table = _load_scored(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "scores.csv").write_text(score_table_csv(table))
    (out / "totals.csv").write_text(totals_csv(table))
    for rank, t in enumerate(table.ranking, 1):
        print(f"{rank}. {t} {table.totals[t]:.6g}")
    return 0


def cmd_report(args) -> int:
    from .report import cactus_data, emit_reports

    rules, records, truths, table = _load_scored(args)
    cactus = cactus_data(records, truths, rules)
    for path in emit_reports(table, cactus, args.out, args.format, records, truths):
        print(path)
    return 0


def cmd_selfcheck(args) -> int:
    """Dogfood: the harness's own verifier as the only entrant on the desk benchmark."""
    from .desk import write_desk_benchmark
    from .report import cactus_data, emit_reports
    from .runner import (
        ToolAdapter,
        VerdictStore,
        annotate_instances,
        load_instances_file,
        run_campaign,
        write_trivial_instance,
    )
    from .scoring import RuleSet, build_score_table, derive_truths

    root = Path(args.dir)
    csv_path = write_desk_benchmark(root / "desk", seed=args.seed)
    rows = load_instances_file(csv_path, "desk")
    store = VerdictStore(root / "store.kv")
    annotate_instances(rows, store, seed=args.seed)
    tool = ToolAdapter("vnn-arena", [sys.executable, "-m", "vnn_arena", "verify", "--seed", str(args.seed)])
    run_campaign([tool], rows, store, write_trivial_instance(root / "trivial"))
    rules = RuleSet.named(args.rules)
    records = store.verdicts()
    truths = derive_truths(records, store.instances(), rules)
    table = build_score_table(records, truths, rules)
    cactus = cactus_data(records, truths, rules)
    emit_reports(table, cactus, root / "reports", "csv", records, truths)
    bad = [r for r in records if r.status.value not in ("sat", "unsat", "unknown")]
    monotone = all(s.is_monotone() for s in cactus)
    print(f"records={len(records)} non_conforming={len(bad)} monotone={monotone} reports={root / 'reports'}")
    return 0 if not bad and monotone else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vnn-arena", description="Neural network verification competition harness.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.set_defaults(func=func)
        sp.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
        return sp

    sp = add("inspect", cmd_inspect, "summarize networks (.onnx or text) and .vnnlib properties")
    sp.add_argument("paths", nargs="+")

    sp = add("verify", cmd_verify, "decide a property; writes sat/unsat/unknown (+ witness) to RESULT_FILE")
    sp.add_argument("network")
    sp.add_argument("property")
    sp.add_argument("timeout", type=float)
    sp.add_argument("result_file")
    sp.add_argument("--config", help="harness TOML whose [verifier] section is used")

    sp = add("falsify", cmd_falsify, "search for a counterexample with the gradient attack")
    sp.add_argument("network")
    sp.add_argument("property")
    sp.add_argument("--out", help="write the witness here instead of stdout")
    sp.add_argument("--steps", type=int, default=30)
    sp.add_argument("--restarts", type=int, default=5)

    sp = add("validate-witness", cmd_validate, "check a witness (or a sat result file); exit 0 iff it is Valid")
    sp.add_argument("network")
    sp.add_argument("property")
    sp.add_argument("witness")
    sp.add_argument("--tol-in", type=float, default=1e-7)
    sp.add_argument("--tol-out", type=float, default=0.0)

    sp = add("measure-overhead", cmd_overhead, "median runtime of a tool on the trivial instance")
    sp.add_argument("tool_cmd", help="tool run command (quoted if it has arguments)")
    sp.add_argument("--name", default="tool")
    sp.add_argument("--repeats", type=int, default=3)

    sp = add("run", cmd_run, "run a resumable campaign into a verdict store")
    sp.add_argument("--config")
    sp.add_argument("--store")
    sp.add_argument("--tool", action="append", help="NAME=COMMAND (repeatable)")
    sp.add_argument("--instances", action="append", help="instance CSV; benchmark name is the file stem")
    sp.add_argument("--oracle-budget", type=float, help="seconds of reference verification per instance")

    for name, func, help_ in (("score", cmd_score, "write scores.csv and totals.csv from a verdict store"),
                              ("report", cmd_report, "write cactus, score, totals and audit files")):
        sp = add(name, func, help_)
        sp.add_argument("--store", required=True)
        sp.add_argument("--rules", choices=["2021", "2022"], default="2021")
        sp.add_argument("--no-time-bonus", action="store_true")
        sp.add_argument("--out", default=".")
        if name == "report":
            sp.add_argument("--format", choices=["csv", "text"], default="csv")

    sp = add("selfcheck", cmd_selfcheck, "end-to-end dogfood campaign on a generated desk benchmark")
    sp.add_argument("--dir", default="selfcheck")
    sp.add_argument("--rules", choices=["2021", "2022"], default="2022")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ArenaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
