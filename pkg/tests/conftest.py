from __future__ import annotations

import io
import random
import threading
import time
from collections import Counter
from pathlib import Path
from typing import Any

import pytest

from ddts import cli, sampleapp
from ddts.definitions import MemoryStore
from ddts.engine import Modes, invoke
from ddts.hooks import HookName, HookRegistry, HookResult


class Recorder:
    """Listener capturing every dispatch as (hook, identifier, run, scope)."""

    def __init__(self) -> None:
        self.calls: list[tuple[HookName, str, str | None, str]] = []
        self._lock = threading.Lock()

    def __call__(self, name: HookName, identifier: str, ctx, payload: Any) -> None:
        with self._lock:
            self.calls.append((name, identifier, ctx.names.get("run"), ctx.scope))

    def count(self, name: HookName, run: str | None = None) -> int:
        return sum(1 for c in self.calls if c[0] is name and (run is None or c[2] == run))

    def counts(self) -> Counter:
        return Counter(c[0] for c in self.calls)

    def sequence(self, run: str) -> list[HookName]:
        return [c[0] for c in self.calls if c[2] == run]


def recording_registry(app_root: Path | str | None = None) -> tuple[HookRegistry, Recorder]:
    registry = HookRegistry(app_root)
    recorder = Recorder()
    registry.add_listener(recorder)
    return registry, recorder


def write_outputs_hooks(registry: HookRegistry, contents: dict[str, bytes] | None = None, delay: float = 0.0) -> None:
    """Register in-process run/outfiles hooks writing one file per run.

    ``contents`` maps run name to file bytes (default: identical bytes for all).
    ``delay`` is an upper bound for a random sleep inside each hook.
    """
    contents = contents or {}

    def nap() -> None:
        if delay:
            time.sleep(random.uniform(0, delay))

    def run(ctx, payload):
        nap()
        run_dir = Path(ctx.paths["run_dir"])
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "out.dat").write_bytes(contents.get(ctx.names["run"], b"same bytes\n"))
        return None

    def outfiles(ctx, payload):
        nap()
        return HookResult(payload=[{"root": ctx.paths["run_dir"], "relpath": "out.dat"}])

    registry.register(HookName.RUN, run)
    registry.register(HookName.OUTFILES, outfiles)


def memory_store(runs: dict[str, dict], suites: dict[str, dict] | None = None, builds: dict[str, dict] | None = None) -> MemoryStore:
    bodies: dict[tuple[str, str], dict] = {}
    for name, body in (builds or {"b": {"flavor": "plain"}}).items():
        bodies[("build", name)] = body
    for name, body in runs.items():
        bodies[("run", name)] = body
    for name, body in (suites or {}).items():
        bodies[("suite", name)] = body
    return MemoryStore(bodies)


def run_memory_suite(store: MemoryStore, suite: str, out_root: Path, registry: HookRegistry, modes: Modes = Modes(), single_run: bool = False):
    stdout, stderr = io.StringIO(), io.StringIO()
    verdict, reporter = invoke(store, suite, out_root, registry=registry, modes=modes, single_run=single_run, stdout=stdout, stderr=stderr)
    return verdict, reporter, stdout.getvalue(), stderr.getvalue()


class CliResult:
    def __init__(self, code: int, stdout: str, stderr: str) -> None:
        self.code = code
        self.stdout = stdout
        self.stderr = stderr

    @property
    def last_line(self) -> str:
        lines = self.stdout.strip().splitlines()
        return lines[-1] if lines else ""


def run_cli(argv: list[str], app: Path, out: Path, registry: HookRegistry | None = None) -> CliResult:
    stdout, stderr = io.StringIO(), io.StringIO()
    code = cli.main(argv, registry=registry, stdout=stdout, stderr=stderr, environ={"DDTS_APP": str(app), "DDTS_OUT": str(out)})
    return CliResult(code, stdout.getvalue(), stderr.getvalue())


@pytest.fixture(scope="session")
def sample_app(tmp_path_factory) -> Path:
    return sampleapp.install(tmp_path_factory.mktemp("app"))


@pytest.fixture
def out_root(tmp_path) -> Path:
    return tmp_path / "out"
