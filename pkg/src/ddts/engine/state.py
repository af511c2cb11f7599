"""Mutable per-node execution state and the verdicts built from it."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ..compare import ComparisonReport, OutputSet


class RunStatus(str, enum.Enum):
    PENDING = "pending"
    BLOCKED = "blocked"
    BUILDING = "building"
    RUNNING = "running"
    CHECKING = "checking"
    PASSED = "passed"
    FAILED = "failed"
    SKIPPED = "skipped"

    @property
    def terminal(self) -> bool:
        return self in (RunStatus.PASSED, RunStatus.FAILED, RunStatus.SKIPPED)


class BuildStatus(str, enum.Enum):
    PENDING = "pending"
    IN_PROGRESS = "in_progress"
    DONE = "done"
    FAILED = "failed"


@dataclass
class RunState:
    name: str
    build: str
    baseline: str | None = None
    status: RunStatus = RunStatus.PENDING
    job_handle: Any = None
    outfiles: list[tuple[Path, str]] | None = None
    failure_reason: str | None = None
    baseline_report: ComparisonReport | None = None
    started_at: float | None = None
    finished_at: float | None = None

    def output_set(self) -> OutputSet:
        return OutputSet.from_entries(self.name, self.outfiles or [])

    def summary(self) -> dict[str, Any]:
        return {
            "status": self.status.value,
            "build": self.build,
            "baseline": self.baseline,
            "failure_reason": self.failure_reason,
            "outfiles": [[str(root), rel] for root, rel in self.outfiles or []],
        }


@dataclass
class BuildState:
    name: str
    status: BuildStatus = BuildStatus.PENDING
    product_dir: Path | None = None
    owner_run: str | None = None
    failure_reason: str | None = None
    reused: bool = False

    def summary(self) -> dict[str, Any]:
        return {
            "status": self.status.value,
            "product_dir": str(self.product_dir) if self.product_dir else None,
            "owner_run": self.owner_run,
            "failure_reason": self.failure_reason,
        }


@dataclass
class GroupVerdict:
    name: str
    members: list[str]
    passed: bool
    reports: list[ComparisonReport] = field(default_factory=list)
    reason: str | None = None


@dataclass
class SuiteVerdict:
    name: str
    passed: bool
    groups: dict[str, GroupVerdict]
    runs: dict[str, RunState]
    builds: dict[str, BuildState]
    build_only: bool = False
    baselines: dict[str, str] = field(default_factory=dict)
    errors: list[str] = field(default_factory=list)
    internal_errors: list[str] = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        if self.internal_errors:
            return 3
        return 0 if self.passed else 1

    def problems(self) -> list[str]:
        out = list(self.errors)
        out += [f"internal error: {e}" for e in self.internal_errors]
        for build in self.builds.values():
            if build.status is BuildStatus.FAILED:
                out.append(f"build {build.name}: failed ({build.failure_reason})")
            elif self.build_only and build.status is not BuildStatus.DONE:
                out.append(f"build {build.name}: not completed")
        if self.build_only:
            return out
        for run in self.runs.values():
            if run.status is RunStatus.FAILED:
                out.append(f"run {run.name}: failed ({run.failure_reason})")
            elif run.status is RunStatus.SKIPPED:
                out.append(f"run {run.name}: skipped ({run.failure_reason})")
            elif run.status is not RunStatus.PASSED:
                out.append(f"run {run.name}: did not finish ({run.status.value})")
            if run.baseline_report is not None and not run.baseline_report.equivalent:
                out.append(f"run {run.name}: baseline {run.baseline_report.describe()}")
        for group in self.groups.values():
            if group.passed:
                continue
            detail = group.reason or "; ".join(
                r.describe() for r in group.reports if not r.equivalent
            )
            out.append(f"group {group.name}: failed ({detail})")
        return out
