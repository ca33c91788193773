"""Minimal stand-in for the trace shim, used by the executor tests.

Usage: stub_trace_shim.py <script> [args...] --out <dir>

Runs the script under the standard library line counter, writes
<stem>_execution_trace.cover beside the script, tees stdout/stderr into
<dir> and writes <dir>/shim_report.json.
"""

import io
import json
import os
import runpy
import shutil
import sys
import tempfile
import time
import trace


def main(argv):
    if "--out" not in argv or argv.index("--out") == len(argv) - 1 or not argv:
        print("usage: stub_trace_shim.py <script> [args...] --out <dir>", file=sys.stderr)
        return 2
    i = argv.index("--out")
    out_dir = argv[i + 1]
    rest = argv[:i] + argv[i + 2:]
    script, args = rest[0], rest[1:]
    os.makedirs(out_dir, exist_ok=True)

    script_path = os.path.abspath(script)
    stdout_path = os.path.join(out_dir, "stdout.txt")
    stderr_path = os.path.join(out_dir, "stderr.txt")
    out_buf, err_buf = io.StringIO(), io.StringIO()
    real_out, real_err = sys.stdout, sys.stderr

    tracer = trace.Trace(count=1, trace=0, ignoredirs=[sys.prefix, sys.exec_prefix])
    exit_status = 0
    start = time.monotonic()
    sys.argv = [script] + args
    sys.stdout, sys.stderr = out_buf, err_buf
    try:
        tracer.runfunc(runpy.run_path, script_path, run_name="__main__")
    except SystemExit as e:
        code = e.code
        exit_status = code if isinstance(code, int) else (0 if code is None else 1)
    except BaseException as e:  # noqa: BLE001
        err_buf.write(f"{type(e).__name__}: {e}\n")
        exit_status = 1
    finally:
        sys.stdout, sys.stderr = real_out, real_err
    wall = time.monotonic() - start

    for path, buf, real in ((stdout_path, out_buf, real_out), (stderr_path, err_buf, real_err)):
        with open(path, "w") as f:
            f.write(buf.getvalue())
        real.write(buf.getvalue())

    stem = os.path.splitext(os.path.basename(script_path))[0]
    cover_path = os.path.join(os.path.dirname(script_path), f"{stem}_execution_trace.cover")
    with tempfile.TemporaryDirectory() as tmp:
        counts = {k: v for k, v in tracer.results().counts.items() if k[0] == script_path}
        trace.CoverageResults(counts=counts).write_results(show_missing=True, summary=False, coverdir=tmp)
        written = [n for n in os.listdir(tmp) if n.endswith(".cover")]
        if written:
            shutil.move(os.path.join(tmp, written[0]), cover_path)
        else:
            cover_path = None

    report = {
        "exit_status": exit_status,
        "wall_seconds": wall,
        "cover_path": cover_path,
        "stdout_path": stdout_path,
        "stderr_path": stderr_path,
    }
    with open(os.path.join(out_dir, "shim_report.json"), "w") as f:
        json.dump(report, f)
    return exit_status


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
