"""Concurrent execution of an :class:`ExecutionGraph`.

The coordinator thread starts one worker per comparison group.  Each group
worker claims its member runs; the first claimant of a run starts that run's
worker, later claimants wait on it.  Run workers perform builds, data
provisioning and baseline contribution inside once-cells: the first worker
into the critical region does the work, the rest reuse the outcome.
"""

from __future__ import annotations

import contextlib
import shutil
import threading
import time
import traceback
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping

from .. import syntax
from ..compare import (
    ComparisonReport,
    compare_sets,
    compare_to_baseline,
    first_difference,
    write_baseline,
)
from ..errors import BuildFailed, Cancelled, DataFailed, DestExists, HookFailure, UnknownHook
from ..hooks import HookContext, HookName, HookRegistry, parse_outfiles
from ..report import Reporter
from .graph import ExecutionGraph, RunNode
from .state import (
    BuildState,
    BuildStatus,
    GroupVerdict,
    RunState,
    RunStatus,
    SuiteVerdict,
)

BUILD_MARKER = ".ddts-build"


@dataclass(frozen=True)
class Modes:
    """Per-invocation switches coming from the command line."""

    use_baseline: Path | None = None
    gen_baseline: Path | None = None
    force_baseline: bool = False
    workers: int | None = None
    hook_timeout: float | None = None


def check_baseline_destinations(graph: ExecutionGraph, modes: Modes) -> None:
    """Refuse, before anything runs, to overwrite an existing baseline."""
    if modes.gen_baseline is None or modes.force_baseline or graph.options.build_only:
        return
    for name in graph.baseline_names():
        target = Path(modes.gen_baseline) / name
        if target.exists():
            raise DestExists(name, target)


class Executor:
    def __init__(
        self,
        graph: ExecutionGraph,
        registry: HookRegistry,
        reporter: Reporter,
        out_root: Path | str,
        app_root: Path | str | None = None,
        modes: Modes = Modes(),
    ) -> None:
        self.graph = graph
        self.registry = registry
        self.reporter = reporter
        self.out_root = Path(out_root).resolve()
        self.app_root = Path(app_root).resolve() if app_root is not None else None
        self.modes = modes
        self.options = graph.options
        self.builds_root = self.out_root / "builds"
        self.runs_root = self.out_root / "runs"

        self.runs = {
            name: RunState(name, node.build, node.baseline) for name, node in graph.runs.items()
        }
        self.builds = {name: BuildState(name) for name in graph.builds}
        self.groups: dict[str, GroupVerdict] = {}

        self._lock = threading.Lock()
        self._cancel = threading.Event()
        self._build_locks = {name: threading.Lock() for name in graph.builds}
        self._data_lock = threading.Lock()
        self._data_outcome: Exception | bool | None = None
        self._baseline_lock = threading.Lock()
        self._baselines: dict[str, str] = {}
        self._run_threads: dict[str, threading.Thread] = {}
        self._run_done: dict[str, threading.Event] = {n: threading.Event() for n in graph.runs}
        self._aux_threads: list[threading.Thread] = []
        self._job_contexts: dict[str, HookContext] = {}
        self._deleted: set[str] = set()
        self._errors: list[str] = []
        self._internal: list[str] = []
        if modes.workers:
            self._slots: Any = threading.BoundedSemaphore(modes.workers)
        else:
            self._slots = contextlib.nullcontext()
        self._suite_ctx = self._make_suite_context()

    # -- contexts -----------------------------------------------------------

    def _make_suite_context(self) -> HookContext:
        paths = {
            "app_root": str(self.app_root) if self.app_root else "",
            "out_root": str(self.out_root),
            "log_path": str(self.reporter.log_path),
            "builds_root": str(self.builds_root),
            "runs_root": str(self.runs_root),
        }
        if self.modes.use_baseline is not None:
            paths["baseline_dir"] = str(Path(self.modes.use_baseline).resolve())
        if self.modes.gen_baseline is not None:
            paths["gen_baseline_dir"] = str(Path(self.modes.gen_baseline).resolve())
        return HookContext(
            suite=None if self.graph.single_run else self.graph.suite_body,
            paths=paths,
            names={} if self.graph.single_run else {"suite": self.graph.name},
            scope=self.graph.name,
            reporter=self.reporter,
            cancel=self._cancel,
            timeout=self.modes.hook_timeout,
        )

    def _run_context(self, node: RunNode) -> HookContext:
        ctx = self._suite_ctx.child(
            run=node.body,
            build=self.graph.builds[node.build].body,
            scope=node.name,
        )
        ctx.names.update(run=node.name, build=node.build)
        ctx.paths["build_dir"] = str(self.builds_root / node.build)
        ctx.paths["run_dir"] = str(self.runs_root / f"{node.name}.{self.reporter.invocation_id}")
        return ctx

    # -- helpers ------------------------------------------------------------

    @property
    def cancelled(self) -> bool:
        return self._cancel.is_set()

    def _check_cancel(self) -> None:
        if self._cancel.is_set():
            raise Cancelled("suite cancelled")

    def _dispatch(self, name: HookName, ctx: HookContext, payload: Any = None):
        self._check_cancel()
        return self.registry.dispatch(name, ctx, payload)

    def _spawn(self, target: Callable, *args: Any, name: str) -> threading.Thread:
        def guarded() -> None:
            try:
                target(*args)
            except BaseException as exc:  # framework fault, reported as exit 3
                self._fault(exc)

        thread = threading.Thread(target=guarded, name=name, daemon=True)
        thread.start()
        return thread

    def _fault(self, exc: BaseException) -> None:
        detail = "".join(traceback.format_exception_only(type(exc), exc)).strip()
        with self._lock:
            self._internal.append(detail)
        try:
            self.reporter.debug(self.graph.name, traceback.format_exc())
            self.reporter.error(self.graph.name, f"internal error: {detail}")
        except Exception:
            pass
        self.cancel(f"internal error: {detail}")

    def cancel(self, reason: str) -> None:
        """Fail-fast cancellation: stop pending work and withdraw queued jobs."""
        with self._lock:
            if self._cancel.is_set():
                return
            self._cancel.set()
            live = [s.name for s in self.runs.values() if s.job_handle is not None]
        self.reporter.warn(self.graph.name, f"cancelling remaining work: {reason}")
        for name in live:
            self._queue_delete(name)

    def _note_job(self, state: RunState, ctx: HookContext, handle: Any) -> None:
        with self._lock:
            state.job_handle = handle
            self._job_contexts[state.name] = ctx.child(cancel=None)
            cancelled = self._cancel.is_set()
        if cancelled:
            self._queue_delete(state.name)

    def _queue_delete(self, run: str) -> None:
        with self._lock:
            state = self.runs[run]
            if run in self._deleted or state.job_handle is None:
                return
            self._deleted.add(run)
            handle = state.job_handle
            ctx = self._job_contexts[run]

        def withdraw() -> None:
            try:
                self.registry.dispatch(HookName.QUEUE_DEL_CMD, ctx, handle)
                self.reporter.info(run, f"run {run}: withdrew job {handle}")
            except (HookFailure, Cancelled) as exc:
                self.reporter.warn(run, f"run {run}: could not withdraw job {handle}: {exc}")

        thread = self._spawn(withdraw, name=f"queue-del-{run}")
        with self._lock:
            self._aux_threads.append(thread)

    def _finish_run(self, state: RunState, status: RunStatus, reason: str | None = None) -> None:
        state.status = status
        state.failure_reason = reason
        state.finished_at = time.monotonic()
        if status is RunStatus.FAILED:
            self.reporter.error(state.name, f"run {state.name} FAILED: {reason}")
            if not self.options.continue_on_error:
                self.cancel(f"run {state.name} failed")
        elif status is RunStatus.SKIPPED:
            self.reporter.warn(state.name, f"run {state.name} skipped: {reason}")

    # -- once-cells ---------------------------------------------------------

    def claim_run(self, name: str) -> threading.Event:
        """Start the run's worker unless someone already did; return its done event."""
        with self._lock:
            if name not in self._run_threads:
                self._run_threads[name] = self._spawn(self._run_worker, name, name=f"run-{name}")
        return self._run_done[name]

    def acquire_build(self, node: RunNode, ctx: HookContext) -> Path:
        state = self.builds[node.build]
        product = self.builds_root / node.build
        with self._build_locks[node.build]:
            if state.status is BuildStatus.DONE:
                return product
            if state.status is BuildStatus.FAILED:
                raise BuildFailed(node.build, state.failure_reason or "")
            self._check_cancel()
            state.status = BuildStatus.IN_PROGRESS
            state.owner_run = node.name
            body = self.graph.builds[node.build].body
            if self.options.retain_builds and self._reusable(product, body):
                state.status, state.product_dir, state.reused = BuildStatus.DONE, product, True
                self.reporter.info(node.build, f"build {node.build} reused from previous invocation")
                return product
            self.reporter.info(node.build, f"build {node.build} started (by run {node.name})")
            bctx = ctx.child(scope=f"{node.build}/{node.name}")
            try:
                payload = self._dispatch(HookName.BUILD_PREP, bctx).payload
                payload = self._dispatch(HookName.BUILD, bctx, payload).payload
                self._dispatch(HookName.BUILD_POST, bctx, payload)
                product.mkdir(parents=True, exist_ok=True)
                (product / BUILD_MARKER).write_text(syntax.dump(body), encoding="utf-8")
            except Cancelled:
                state.status = BuildStatus.PENDING
                state.owner_run = None
                raise
            except (HookFailure, OSError) as exc:
                state.status = BuildStatus.FAILED
                state.failure_reason = str(exc)
                self.reporter.error(node.build, f"build {node.build} FAILED: {exc}")
                raise BuildFailed(node.build, str(exc)) from exc
            state.status, state.product_dir = BuildStatus.DONE, product
            self.reporter.info(node.build, f"build {node.build} finished")
            return product

    @staticmethod
    def _reusable(product: Path, body: Mapping[str, Any]) -> bool:
        marker = product / BUILD_MARKER
        try:
            return marker.is_file() and syntax.loads(marker.read_text(encoding="utf-8")) == body
        except (OSError, syntax.SyntaxProblem):
            return False

    def provision_data(self, ctx: HookContext) -> None:
        with self._data_lock:
            if self._data_outcome is None:
                self._check_cancel()
                try:
                    self._dispatch(HookName.DATA, ctx)
                    self._data_outcome = True
                except HookFailure as exc:
                    self._data_outcome = DataFailed(str(exc))
                    self.reporter.error(ctx.scope, f"data provisioning FAILED: {exc}")
            if isinstance(self._data_outcome, DataFailed):
                raise self._data_outcome

    def _contribute_baseline(self, node: RunNode, state: RunState) -> None:
        name = node.baseline
        with self._baseline_lock:
            if name in self._baselines:
                return
            dest = Path(self.modes.gen_baseline)
            write_baseline(name, state.output_set(), dest, force=self.modes.force_baseline)
            self._baselines[name] = node.name
        self.reporter.info(node.name, f"baseline {name} created from run {node.name}")

    # -- comparisons --------------------------------------------------------

    def _comparator(self, ctx: HookContext, scope: str) -> Callable[[Path, Path], bool]:
        def compare(left: Path, right: Path) -> bool:
            result = self.registry.dispatch(
                HookName.COMP, ctx, {"left": str(left), "right": str(right), "scope": scope}
            )
            if result.ok:
                ctx.log(f"compared {left} with {right}: equivalent")
            else:
                detail = ""
                with contextlib.suppress(OSError):
                    offset = first_difference(left, right)
                    if offset is not None:
                        detail = f" (first differing byte at offset {offset})"
                ctx.log(f"compared {left} with {right}: NOT equivalent{detail}", level="info")
            return result.ok

        return compare

    def _baseline_check(self, node: RunNode, state: RunState, ctx: HookContext) -> None:
        try:
            report = compare_to_baseline(
                state.output_set(), node.baseline, self.modes.use_baseline, self._comparator(ctx, "baseline")
            )
        except (HookFailure, OSError) as exc:
            report = ComparisonReport("baseline", node.name, node.baseline, reason=str(exc))
        state.baseline_report = report
        if report.equivalent:
            self.reporter.info(node.name, f"baseline comparison run {report.describe()}")
        else:
            self.reporter.error(node.name, f"baseline comparison run {report.describe()}")

    # -- workers ------------------------------------------------------------

    def _run_worker(self, name: str) -> None:
        state = self.runs[name]
        try:
            self.execute_run(self.graph.runs[name], state)
        except BaseException:
            if not state.status.terminal:
                state.status = RunStatus.FAILED
                state.failure_reason = "internal error"
            raise
        finally:
            if not state.status.terminal:
                state.status = RunStatus.SKIPPED
                state.failure_reason = state.failure_reason or "cancelled"
            self._run_done[name].set()

    def execute_run(self, node: RunNode, state: RunState) -> None:
        for req in node.requires:
            state.status = RunStatus.BLOCKED
            self.claim_run(req).wait()
            if self.runs[req].status is not RunStatus.PASSED:
                reason = f"required run {req} did not pass"
                skipped = self.runs[req].status is RunStatus.SKIPPED
                if self.options.continue_on_error or skipped:
                    self._finish_run(state, RunStatus.SKIPPED, reason)
                else:
                    self._finish_run(state, RunStatus.FAILED, reason)
                return
        build = self.builds[node.build]
        if build.status is BuildStatus.FAILED:
            self._finish_run(state, RunStatus.FAILED, f"build {node.build} failed: {build.failure_reason}")
            return
        if self.cancelled:
            self._finish_run(state, RunStatus.SKIPPED, "cancelled")
            return
        with self._slots:
            ctx = self._run_context(node)
            try:
                state.status = RunStatus.BUILDING
                self.acquire_build(node, ctx)
                if self.options.build_only:
                    state.status = RunStatus.SKIPPED
                    state.failure_reason = "build-only suite"
                    return
                self.provision_data(ctx)
                self._perform(node, state, ctx)
            except BuildFailed as exc:
                self._finish_run(state, RunStatus.FAILED, str(exc))
            except DataFailed as exc:
                self._finish_run(state, RunStatus.FAILED, str(exc))
            except (HookFailure, UnknownHook) as exc:
                self._finish_run(state, RunStatus.FAILED, str(exc))
            except Cancelled:
                self._finish_run(state, RunStatus.SKIPPED, "cancelled")
            except (DestExists, OSError) as exc:
                self._finish_run(state, RunStatus.FAILED, str(exc))

    def _perform(self, node: RunNode, state: RunState, ctx: HookContext) -> None:
        payload = self._dispatch(HookName.RUN_PREP, ctx).payload
        state.status = RunStatus.RUNNING
        state.started_at = time.monotonic()
        self.reporter.info(node.name, f"run {node.name} started")
        payload = self._dispatch(HookName.RUN, ctx, payload).payload
        if isinstance(payload, Mapping) and payload.get("job_handle") is not None:
            self._note_job(state, ctx, payload["job_handle"])
        try:
            payload = self._dispatch(HookName.RUN_POST, ctx, payload).payload
        finally:
            with self._lock:
                if not self._cancel.is_set():
                    state.job_handle = None
        state.status = RunStatus.CHECKING
        check = self._dispatch(HookName.RUN_CHECK, ctx, payload)
        if not check.ok:
            self._finish_run(state, RunStatus.FAILED, "run_check reported failure")
            return
        state.outfiles = parse_outfiles(self._dispatch(HookName.OUTFILES, ctx, check.payload).payload)
        state.status = RunStatus.PASSED
        state.finished_at = time.monotonic()
        self.reporter.info(node.name, f"run {node.name} finished: passed")
        if node.baseline:
            if self.modes.use_baseline is not None:
                self._baseline_check(node, state, ctx)
            if self.modes.gen_baseline is not None:
                self._contribute_baseline(node, state)

    def _group_worker(self, group: str, members: list[str]) -> None:
        done = [self.claim_run(m) for m in members]
        for event in done:
            event.wait()
        states = [self.runs[m] for m in members]
        bad = [s.name for s in states if s.status is not RunStatus.PASSED]
        if bad:
            verdict = GroupVerdict(group, members, False, reason="run(s) did not pass: " + ", ".join(bad))
        else:
            reports = []
            master = states[0].output_set()
            for other in states[1:]:
                node = self.graph.runs[other.name]
                ctx = self._suite_ctx.child(
                    run=node.body,
                    build=self.graph.builds[node.build].body,
                    scope=group,
                )
                ctx.names.update(group=group, run=node.name, build=node.build)
                try:
                    report = compare_sets(master, other.output_set(), self._comparator(ctx, "group"))
                except (HookFailure, OSError) as exc:
                    report = ComparisonReport("group", master.name, other.name, reason=str(exc))
                reports.append(report)
                log = self.reporter.info if report.equivalent else self.reporter.error
                log(group, f"group {group}: comparison {report.describe()}")
            baseline_ok = all(
                s.baseline_report is None or s.baseline_report.equivalent for s in states
            )
            passed = all(r.equivalent for r in reports) and baseline_ok
            reason = None if baseline_ok else "baseline comparison failed"
            verdict = GroupVerdict(group, members, passed, reports, reason)
        with self._lock:
            self.groups[group] = verdict
        if verdict.passed:
            self.reporter.info(group, f"group {group} passed")
        else:
            self.reporter.error(group, f"group {group} FAILED")

    # -- coordinator --------------------------------------------------------

    def _clear_builds(self) -> None:
        if self.builds_root.exists():
            self.reporter.debug(self.graph.name, f"removing previous builds under {self.builds_root}")
            shutil.rmtree(self.builds_root)
        self.builds_root.mkdir(parents=True, exist_ok=True)

    def _join_all(self) -> None:
        while True:
            with self._lock:
                threads = list(self._run_threads.values()) + list(self._aux_threads)
            for thread in threads:
                thread.join()
            with self._lock:
                if len(self._run_threads) + len(self._aux_threads) == len(threads):
                    return

    def execute(self) -> SuiteVerdict:
        check_baseline_destinations(self.graph, self.modes)
        kind = "run" if self.graph.single_run else "suite"
        self.reporter.info(self.graph.name, f"{kind} {self.graph.name} started, log {self.reporter.log_path}")
        self.runs_root.mkdir(parents=True, exist_ok=True)
        if self.options.retain_builds:
            self.builds_root.mkdir(parents=True, exist_ok=True)
        else:
            self._clear_builds()
        prep_ok = True
        try:
            self.registry.dispatch(HookName.SUITE_PREP, self._suite_ctx)
        except (HookFailure, Cancelled) as exc:
            prep_ok = False
            self._errors.append(f"suite_prep failed: {exc}")
            self.reporter.error(self.graph.name, f"suite_prep FAILED: {exc}")
            self.cancel("suite_prep failed")

        if self.options.build_only or self.graph.single_run:
            for name in self.graph.runs:
                self.claim_run(name)
        else:
            workers = [
                self._spawn(self._group_worker, g, members, name=f"group-{g}")
                for g, members in self.graph.groups.items()
            ]
            for worker in workers:
                worker.join()
        self._join_all()

        verdict = self._verdict(prep_ok)
        try:
            self.registry.dispatch(
                HookName.SUITE_POST,
                self._suite_ctx.child(cancel=None),
                {
                    "passed": verdict.passed,
                    "runs": {n: s.summary() for n, s in self.runs.items()},
                    "builds": {n: s.summary() for n, s in self.builds.items()},
                },
            )
        except (HookFailure, Cancelled) as exc:
            verdict.errors.append(f"suite_post failed: {exc}")
            verdict.passed = False
            self.reporter.error(self.graph.name, f"suite_post FAILED: {exc}")
        return verdict

    def _verdict(self, prep_ok: bool) -> SuiteVerdict:
        if self.options.build_only:
            passed = all(b.status is BuildStatus.DONE for b in self.builds.values())
        else:
            passed = (
                all(g.passed for g in self.groups.values())
                and len(self.groups) == len(self.graph.groups)
                and all(s.status is RunStatus.PASSED for s in self.runs.values())
                and all(
                    s.baseline_report is None or s.baseline_report.equivalent
                    for s in self.runs.values()
                )
            )
        passed = passed and prep_ok and not self._internal
        return SuiteVerdict(
            name=self.graph.name,
            passed=passed,
            groups=dict(self.groups),
            runs=self.runs,
            builds=self.builds,
            build_only=self.options.build_only,
            baselines=dict(self._baselines),
            errors=list(self._errors),
            internal_errors=list(self._internal),
        )


def execute_suite(
    graph: ExecutionGraph,
    registry: HookRegistry,
    reporter: Reporter,
    out_root: Path | str,
    app_root: Path | str | None = None,
    modes: Modes = Modes(),
) -> SuiteVerdict:
    return Executor(graph, registry, reporter, out_root, app_root, modes).execute()
