"""Hook executables for the sample application.

Every file in the installed ``hooks/`` directory is a two-line shim calling
:func:`main`; the shim's filename selects the implementation here.  Each
implementation receives the decoded context and payload and returns the
response mapping (or raises :class:`Failed`).

Run-definition keys understood by these hooks, beyond ``build`` and
``baseline``:

seed, steps, perturb
    Parameters written to the toy program's parameter file.
batch, batch_delay
    ``batch: true`` makes ``lib_run`` submit to SimBatch instead of running
    directly; ``batch_delay`` is the simulated queue wait in seconds.
simulate_crash
    ``run_post`` truncates ``summary.txt``, as a crashed run would leave it.
await_queued_job
    Name of a run whose SimBatch job must be queued before ``run_prep``
    returns.  Used to stage fail-fast scenarios deterministically.
"""

from __future__ import annotations

import os
import shutil
import subprocess
import sys
import time
from pathlib import Path
from typing import Any, Callable

from .. import syntax
from .simbatch import DONE, QUEUED, SimBatch

TOY_SOURCE = Path(__file__).with_name("toy.py")
PARAM_FILE = "params"
OUTPUTS = ("field.dat", "summary.txt")
COMPLETE = "status: complete"


class Failed(Exception):
    pass


def _queue(ctx: dict) -> SimBatch:
    return SimBatch(Path(ctx["paths"]["out_root"]) / "simbatch")


def _run_dir(ctx: dict) -> Path:
    return Path(ctx["paths"]["run_dir"])


def _toy(ctx: dict) -> Path:
    return Path(ctx["paths"]["build_dir"]) / "toy"


def build(ctx: dict, payload: Any) -> dict:
    build_dir = Path(ctx["paths"]["build_dir"])
    build_dir.mkdir(parents=True, exist_ok=True)
    target = build_dir / "toy"
    shutil.copyfile(TOY_SOURCE, target)
    target.chmod(0o755)
    print(f"built {target} for {ctx['names'].get('build')}", file=sys.stderr)
    return {"payload": str(build_dir)}


def run_prep(ctx: dict, payload: Any) -> dict:
    run = ctx["run"]
    run_dir = _run_dir(ctx)
    run_dir.mkdir(parents=True, exist_ok=True)
    lines = [
        f"seed: {int(run.get('seed', 1))}",
        f"steps: {int(run.get('steps', 16))}",
        f"perturb: {float(run.get('perturb', 0.0))!r}",
    ]
    (run_dir / PARAM_FILE).write_text("\n".join(lines) + "\n", encoding="utf-8")
    awaited = run.get("await_queued_job")
    if awaited:
        _await_queued(ctx, str(awaited))
    return {"payload": {"run_dir": str(run_dir)}}


def _await_queued(ctx: dict, run_name: str, timeout: float = 60.0) -> None:
    own = _run_dir(ctx)
    invocation = own.name[len(ctx["names"]["run"]) + 1:]
    wanted = str(Path(ctx["paths"]["runs_root"]) / f"{run_name}.{invocation}")
    queue = _queue(ctx)
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        for job, state in queue.jobs().items():
            if state == QUEUED and queue.spec(job)["cwd"] == wanted:
                print(f"job {job} of run {run_name} is queued", file=sys.stderr)
                return
        time.sleep(0.05)
    raise Failed(f"no queued job appeared for run {run_name}")


def run_direct(ctx: dict, payload: Any) -> dict:
    run_dir = _run_dir(ctx)
    proc = subprocess.run(
        [str(_toy(ctx)), str(run_dir / PARAM_FILE)],
        cwd=run_dir,
        capture_output=True,
        text=True,
    )
    sys.stderr.write(proc.stderr)
    if proc.returncode != 0:
        raise Failed(f"toy exited with status {proc.returncode}")
    return {"payload": {"run_dir": str(run_dir)}}


def run_batch(ctx: dict, payload: Any) -> dict:
    run_dir = _run_dir(ctx)
    delay = float(ctx["run"].get("batch_delay", 0.0))
    job = _queue(ctx).submit([str(_toy(ctx)), str(run_dir / PARAM_FILE)], run_dir, delay)
    print(f"submitted job {job}", file=sys.stderr)
    return {"payload": {"run_dir": str(run_dir), "job_handle": job}}


def run(ctx: dict, payload: Any) -> dict:
    if ctx["run"].get("batch"):
        return run_batch(ctx, payload)
    return run_direct(ctx, payload)


def run_post(ctx: dict, payload: Any) -> dict:
    payload = dict(payload or {})
    job = payload.pop("job_handle", None)
    if job is not None:
        state = _queue(ctx).wait(job)
        print(f"job {job} ended {state}", file=sys.stderr)
        if state != DONE:
            raise Failed(f"batch job {job} ended {state}")
    if ctx["run"].get("simulate_crash"):
        summary = _run_dir(ctx) / "summary.txt"
        lines = summary.read_text(encoding="utf-8").splitlines(keepends=True)
        summary.write_text("".join(lines[:-1]), encoding="utf-8")
        print("simulated crash: summary truncated", file=sys.stderr)
    return {"payload": payload}


def run_check(ctx: dict, payload: Any) -> dict:
    summary = _run_dir(ctx) / "summary.txt"
    try:
        lines = summary.read_text(encoding="utf-8").splitlines()
    except FileNotFoundError:
        lines = []
    ok = bool(lines) and lines[-1].strip() == COMPLETE
    if not ok:
        print(f"{summary} lacks the completion line", file=sys.stderr)
    return {"ok": ok, "payload": payload}


def outfiles(ctx: dict, payload: Any) -> dict:
    run_dir = str(_run_dir(ctx))
    return {"payload": [{"root": run_dir, "relpath": name} for name in OUTPUTS]}


def queue_del_cmd(ctx: dict, payload: Any) -> dict:
    cancelled = _queue(ctx).cancel(str(payload))
    print(f"job {payload}: {'cancelled' if cancelled else 'already finished'}", file=sys.stderr)
    return {}


HOOKS: dict[str, Callable[[dict, Any], dict]] = {
    "lib_build": build,
    "lib_run_prep": run_prep,
    "lib_run": run,
    "run_direct": run_direct,
    "run_batch": run_batch,
    "lib_run_post": run_post,
    "lib_run_check": run_check,
    "lib_outfiles": outfiles,
    "lib_queue_del_cmd": queue_del_cmd,
}


def main(identifier: str | None = None) -> None:
    identifier = identifier or os.path.basename(sys.argv[0])
    try:
        impl = HOOKS[identifier]
        doc = syntax.loads(sys.stdin.read()) or {}
        response = impl(doc.get("context") or {}, doc.get("payload"))
    except Failed as exc:
        print(f"{identifier}: {exc}", file=sys.stderr)
        sys.exit(1)
    except Exception as exc:
        print(f"{identifier}: {type(exc).__name__}: {exc}", file=sys.stderr)
        sys.exit(1)
    sys.stdout.write(syntax.dump(response))
