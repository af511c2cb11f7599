"""Execution graph derived from a suite (or a single run)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

from ..definitions import DefinitionKind, DefinitionStore, SuiteModel, SuiteOptions
from ..errors import BadRun, CycleError


@dataclass
class BuildNode:
    name: str
    body: dict[str, Any]
    dependents: list[str] = field(default_factory=list)


@dataclass
class RunNode:
    name: str
    body: dict[str, Any]
    build: str
    requires: list[str] = field(default_factory=list)
    groups: list[str] = field(default_factory=list)

    @property
    def baseline(self) -> str | None:
        return self.body.get("baseline")


@dataclass
class ExecutionGraph:
    name: str
    suite_body: dict[str, Any]
    options: SuiteOptions
    groups: dict[str, list[str]]
    runs: dict[str, RunNode]
    builds: dict[str, BuildNode]
    single_run: bool = False

    def edges(self) -> list[tuple[str, str]]:
        """Dependency edges as ``(dependent, prerequisite)`` node labels."""
        out = [(f"suite:{self.name}", f"group:{g}") for g in self.groups]
        for group, members in self.groups.items():
            out += [(f"group:{group}", f"run:{r}") for r in members]
        for run in self.runs.values():
            out.append((f"run:{run.name}", f"build:{run.build}"))
            out += [(f"run:{run.name}", f"run:{req}") for req in run.requires]
        return out

    def baseline_names(self) -> list[str]:
        return sorted({r.baseline for r in self.runs.values() if r.baseline})


def _requires(name: str, body: dict[str, Any]) -> list[str]:
    value = body.get("require")
    if value is None:
        return []
    if isinstance(value, str):
        return [value]
    if isinstance(value, list) and all(isinstance(v, str) for v in value):
        return list(value)
    raise BadRun(f"run '{name}': require must name a run or list runs")


def _check_acyclic(runs: dict[str, RunNode]) -> None:
    state: dict[str, int] = {}
    stack: list[str] = []

    def visit(name: str) -> None:
        state[name] = 1
        stack.append(name)
        for req in runs[name].requires:
            if state.get(req) == 1:
                raise CycleError(stack[stack.index(req):], what="require")
            if req not in state:
                visit(req)
        stack.pop()
        state[name] = 2

    for name in runs:
        if name not in state:
            visit(name)


def _collect(
    name: str,
    suite_body: dict[str, Any],
    options: SuiteOptions,
    groups: dict[str, list[str]],
    roots: list[str],
    store: DefinitionStore,
    single_run: bool = False,
) -> ExecutionGraph:
    runs: dict[str, RunNode] = {}
    builds: dict[str, BuildNode] = {}
    pending = list(roots)
    while pending:
        run_name = pending.pop(0)
        if run_name in runs:
            continue
        resolved = store.run(run_name)
        body = resolved.body
        node = RunNode(run_name, body, body["build"], _requires(run_name, body))
        runs[run_name] = node
        pending.extend(r for r in node.requires if r not in runs)
    for group, members in groups.items():
        for member in members:
            runs[member].groups.append(group)
    for run in runs.values():
        if run.build not in builds:
            builds[run.build] = BuildNode(run.build, store.resolve(DefinitionKind.BUILD, run.build).body)
        builds[run.build].dependents.append(run.name)
    _check_acyclic(runs)
    return ExecutionGraph(name, suite_body, options, groups, runs, builds, single_run)


def plan(suite: SuiteModel, store: DefinitionStore) -> ExecutionGraph:
    roots: list[str] = []
    for members in suite.groups.values():
        roots += [m for m in members if m not in roots]
    return _collect(suite.name, suite.body, suite.options, suite.groups, roots, store)


def plan_run(run: str, store: DefinitionStore) -> ExecutionGraph:
    """Graph for a single run: the run, its build, and whatever it requires."""
    return _collect(run, {}, SuiteOptions(), {}, [run], store, single_run=True)
