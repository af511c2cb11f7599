"""Planning and executing test suites."""

from __future__ import annotations

from pathlib import Path
from typing import IO

from ..definitions import DefinitionStore
from ..hooks import HookRegistry
from ..report import Reporter
from .executor import Executor, Modes, check_baseline_destinations, execute_suite
from .graph import BuildNode, ExecutionGraph, RunNode, plan, plan_run
from .state import BuildState, BuildStatus, GroupVerdict, RunState, RunStatus, SuiteVerdict

__all__ = [
    "BuildNode",
    "BuildState",
    "BuildStatus",
    "ExecutionGraph",
    "Executor",
    "GroupVerdict",
    "Modes",
    "RunNode",
    "RunState",
    "RunStatus",
    "SuiteVerdict",
    "check_baseline_destinations",
    "execute_suite",
    "invoke",
    "plan",
    "plan_run",
]


def invoke(
    store: DefinitionStore,
    target: str,
    out_root: Path | str,
    registry: HookRegistry | None = None,
    modes: Modes = Modes(),
    single_run: bool = False,
    stdout: IO[str] | None = None,
    stderr: IO[str] | None = None,
) -> tuple[SuiteVerdict, Reporter]:
    """Resolve, plan, execute and report one suite (or single run).

    Definition, hook-alias and baseline-destination problems raise before
    any output is written.  The returned reporter is closed.
    """
    graph = plan_run(target, store) if single_run else plan(store.suite(target), store)
    check_baseline_destinations(graph, modes)
    if registry is None:
        registry = HookRegistry(store.app_root)
    registry.check_aliases(
        [graph.suite_body]
        + [node.body for node in graph.runs.values()]
        + [node.body for node in graph.builds.values()]
    )
    reporter = Reporter.create(out_root, target, stdout=stdout, stderr=stderr)
    try:
        verdict = Executor(graph, registry, reporter, out_root, store.app_root, modes).execute()
        reporter.finalize(verdict, scope=target)
    finally:
        reporter.close()
    return verdict, reporter
