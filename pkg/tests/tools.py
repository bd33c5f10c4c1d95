"""Synthetic entrant tools written as small Python scripts."""

import sys
import textwrap

from vnn_arena.runner import ToolAdapter

HEADER = """\
import os, sys, time
net, spec, timeout, result = sys.argv[-4:]
trivial = os.path.basename(spec).startswith("trivial")
"""


def make_tool(directory, name, body, args=()):
    path = directory / f"{name}.py"
    path.write_text(HEADER + textwrap.dedent(body))
    return ToolAdapter(name, [sys.executable, str(path), *map(str, args)])


def sleep_work_tool(directory, s, t, name=None):
    """Sleeps ``s`` seconds on every run (start-up cost), then busy-works ``t`` seconds on real instances."""
    return make_tool(directory, name or f"sw_{s}_{t}", f"""
        time.sleep({s})
        if not trivial:
            end = time.perf_counter() + {t}
            while time.perf_counter() < end:
                pass
        open(result, "w").write("unknown\\n")
    """)


def answer_tool(directory, name, answers, delay=0.0):
    """Answers from a map of property file name to result text (default ``unknown``)."""
    return make_tool(directory, name, f"""
        answers = {answers!r}
        time.sleep({delay})
        open(result, "w").write("sat\\n((X_0 0.75))\\n" if trivial else answers.get(os.path.basename(spec), "unknown\\n"))
    """)


def forever_tool(directory, pid_file, detach=False, ignore_term=False):
    """Spawns a sleeping child (optionally in its own session), records its pid, then spins.

    With ``ignore_term`` both the tool and its child ignore SIGTERM.
    """
    return make_tool(directory, "forever", f"""
        import signal, subprocess
        if trivial:
            open(result, "w").write("unknown\\n")
            sys.exit(0)
        code = "import time; time.sleep(1000)"
        if {ignore_term!r}:
            signal.signal(signal.SIGTERM, signal.SIG_IGN)
            code = "import signal, time; signal.signal(signal.SIGTERM, signal.SIG_IGN); time.sleep(1000)"
        child = subprocess.Popen([sys.executable, "-c", code], start_new_session={detach!r})
        open({str(pid_file)!r}, "w").write(str(child.pid))
        while True:
            time.sleep(0.05)
    """)


def stubborn_answer_tool(directory, answer, delay):
    """Ignores SIGTERM and writes ``answer`` after ``delay`` seconds."""
    return make_tool(directory, "stubborn", f"""
        import signal
        signal.signal(signal.SIGTERM, signal.SIG_IGN)
        time.sleep({delay})
        open(result, "w").write({answer!r})
    """)
