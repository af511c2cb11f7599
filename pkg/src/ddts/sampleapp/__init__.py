"""A small, complete application used as the end-to-end fixture.

It consists of

* ``toy.py``, a deterministic stand-in for a simulation code,
* ``simbatch.py``, a directory-backed stand-in for a batch queueing system,
* ``hookimpl.py``, the hook executables that build and run the toy program,
* ``app/``, the build, run and suite definitions.

``install(dest)`` lays these out as an application root usable through
``DDTS_APP=dest ddts <suite>``; ``python -m ddts.sampleapp DEST`` does the same
from the shell.
"""

from __future__ import annotations

import shutil
import sys
from pathlib import Path

APP_DIR = Path(__file__).with_name("app")

HOOK_IDENTIFIERS = (
    "lib_build",
    "lib_run_prep",
    "lib_run",
    "run_direct",
    "run_batch",
    "lib_run_post",
    "lib_run_check",
    "lib_outfiles",
    "lib_queue_del_cmd",
)

PASSING_SUITES = ("pass", "suite1", "smoke", "baseline", "require", "build_only", "batch", "retain")
FAILING_SUITES = ("perturbed", "crash", "continue", "failfast", "require_fail", "full")


def _shim() -> str:
    return f"#!{sys.executable}\nfrom ddts.sampleapp.hookimpl import main\nmain()\n"


def sample_hooks() -> tuple[str, ...]:
    """Identifiers of the hook executables the sample application provides."""
    return HOOK_IDENTIFIERS


def fixture_suites() -> dict[str, list[str]]:
    """Names of the shipped definitions, by kind plural."""
    return {
        kind: sorted(p.name for p in (APP_DIR / kind).iterdir() if p.is_file())
        for kind in ("builds", "runs", "suites")
    }


def install(dest: Path | str) -> Path:
    """Copy the definitions to ``dest`` and write its ``hooks/`` shims."""
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    for kind in ("builds", "runs", "suites"):
        shutil.copytree(APP_DIR / kind, dest / kind, dirs_exist_ok=True)
    hooks = dest / "hooks"
    hooks.mkdir(exist_ok=True)
    for identifier in HOOK_IDENTIFIERS:
        path = hooks / identifier
        path.write_text(_shim(), encoding="utf-8")
        path.chmod(0o755)
    return dest
