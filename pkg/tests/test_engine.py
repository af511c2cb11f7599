from __future__ import annotations

import random
import threading
import time
from collections import Counter
from pathlib import Path

import pytest
from conftest import memory_store, recording_registry, run_memory_suite, write_outputs_hooks

import ddts.engine.executor as executor_module
from ddts.definitions import MemoryStore
from ddts.engine import BuildStatus, Modes, RunStatus, plan, plan_run
from ddts.errors import Cancelled, CycleError, DestExists, HookFailure, NotFound, UnknownHook
from ddts.hooks import HookName, HookResult

RUN_PHASES = [HookName.RUN_PREP, HookName.RUN, HookName.RUN_POST, HookName.RUN_CHECK, HookName.OUTFILES]
BUILD_PHASES = [HookName.BUILD_PREP, HookName.BUILD, HookName.BUILD_POST]


def count_baseline_writes(monkeypatch) -> Counter:
    writes: Counter = Counter()
    original = executor_module.write_baseline

    def counting(name, outputs, dest, force=False):
        writes[name] += 1
        return original(name, outputs, dest, force)

    monkeypatch.setattr(executor_module, "write_baseline", counting)
    return writes


def shared_build_store(n_runs: int = 8, baselines: tuple[str, ...] = ("bl_x", "bl_y")) -> MemoryStore:
    runs = {f"r{i}": {"build": "b", "baseline": baselines[i % len(baselines)]} for i in range(n_runs)}
    names = list(runs)
    suites = {"s": {"g_all": names, "g_even": names[::2], "g_rev": names[::-1][:3]}}
    return memory_store(runs, suites)


def add_delay_hooks(registry, delay: float) -> None:
    def nap(ctx, payload):
        time.sleep(random.uniform(0, delay))
        return HookResult(payload=payload)

    for name in (HookName.BUILD, HookName.DATA, HookName.RUN_PREP, HookName.RUN_CHECK):
        registry.register(name, nap)


@pytest.mark.parametrize("rep", range(15))
def test_execute_once_under_contention(tmp_path, monkeypatch, rep):
    writes = count_baseline_writes(monkeypatch)
    registry, rec = recording_registry()
    add_delay_hooks(registry, 0.004)
    write_outputs_hooks(registry, delay=0.004)
    verdict, *_ = run_memory_suite(
        shared_build_store(), "s", tmp_path / "out", registry, Modes(gen_baseline=tmp_path / "bl")
    )
    assert verdict.passed, verdict.problems()
    assert rec.count(HookName.BUILD) == 1
    assert rec.count(HookName.BUILD_PREP) == 1
    assert rec.count(HookName.DATA) == 1
    assert writes == {"bl_x": 1, "bl_y": 1}
    assert rec.count(HookName.RUN) == 8


def test_hook_order_per_run(tmp_path):
    registry, rec = recording_registry()
    write_outputs_hooks(registry)
    store = shared_build_store(4, baselines=("bl",))
    bl = tmp_path / "bl"
    gen_registry, _ = recording_registry()
    write_outputs_hooks(gen_registry)
    run_memory_suite(store, "s", tmp_path / "o1", gen_registry, Modes(gen_baseline=bl))
    verdict, *_ = run_memory_suite(store, "s", tmp_path / "out", registry, Modes(use_baseline=bl))
    assert verdict.passed, verdict.problems()
    names = [c[0] for c in rec.calls]
    assert names[0] is HookName.SUITE_PREP and names.count(HookName.SUITE_PREP) == 1
    assert names[-1] is HookName.SUITE_POST and names.count(HookName.SUITE_POST) == 1
    owners = [c[2] for c in rec.calls if c[0] is HookName.BUILD]
    data_owner = [c[2] for c in rec.calls if c[0] is HookName.DATA]
    assert len(owners) == 1 and len(data_owner) == 1
    for run in ("r0", "r1", "r2", "r3"):
        seq = rec.sequence(run)
        expected_prefix = (BUILD_PHASES if run == owners[0] else []) + ([HookName.DATA] if run == data_owner[0] else [])
        assert seq[: len(expected_prefix)] == expected_prefix
        rest = seq[len(expected_prefix):]
        assert rest[:5] == RUN_PHASES
        comps = rest[5:]
        assert comps and set(comps) == {HookName.COMP}
        assert len([c for c in rec.calls if c[0] is HookName.COMP and c[2] == run and c[3] == run]) == 1


def test_comp_counts_per_scope(tmp_path):
    registry, rec = recording_registry()
    write_outputs_hooks(registry)
    store = memory_store({"a": {"build": "b"}, "b2": {"build": "b"}, "c": {"build": "b"}}, {"s": {"g": ["a", "b2", "c"]}})
    verdict, *_ = run_memory_suite(store, "s", tmp_path / "out", registry)
    assert verdict.passed
    # No baselines: only group-scoped comps, one per non-master run, none for the master.
    assert rec.count(HookName.COMP, "a") == 0
    assert rec.count(HookName.COMP, "b2") == 1 and rec.count(HookName.COMP, "c") == 1


def test_homogeneous_suite_passes_and_perturbed_group_fails_alone(tmp_path):
    runs = {n: {"build": "b"} for n in ("r1", "r2", "p", "q1", "q2")}
    store = memory_store(runs, {"s": {"g1": ["r1", "r2", "p"], "g2": ["q1", "q2"]}})
    registry, rec = recording_registry()
    write_outputs_hooks(registry, {"p": b"perturbed\n"})
    verdict, _, out, err = run_memory_suite(store, "s", tmp_path / "out", registry)
    assert verdict.exit_code == 1
    assert not verdict.groups["g1"].passed and verdict.groups["g2"].passed
    assert verdict.groups["g1"].reports[1].differing == ["out.dat"]
    assert rec.count(HookName.RUN) == 5, "inequivalence must not cancel other work"
    assert out.splitlines()[-1].startswith("TESTS FAILED")


def test_smoke_group_passes_on_completion(tmp_path):
    store = memory_store({"smoke": {"build": "b"}}, {"s": {"smoke": ["smoke"]}})
    registry, rec = recording_registry()
    verdict, _, out, _ = run_memory_suite(store, "s", tmp_path / "out", registry)
    assert verdict.passed and verdict.exit_code == 0
    assert out.splitlines()[-1] == "ALL TESTS PASSED"
    assert rec.count(HookName.COMP) == 0


def test_shared_run_across_groups_runs_once(tmp_path):
    store = memory_store(
        {"a": {"build": "b"}, "x": {"build": "b"}, "y": {"build": "b"}},
        {"s": {"g1": ["a", "x"], "g2": ["a", "y"], "g3": ["a"]}},
    )
    registry, rec = recording_registry()
    write_outputs_hooks(registry, delay=0.01)
    verdict, *_ = run_memory_suite(store, "s", tmp_path / "out", registry)
    assert verdict.passed
    assert rec.count(HookName.RUN, "a") == 1


def failing_check(registry, failing: set[str]) -> None:
    registry.register(HookName.RUN_CHECK, lambda ctx, p: HookResult(ok=ctx.names["run"] not in failing))


def test_require_waits_for_predecessor(tmp_path):
    store = memory_store(
        {"short": {"build": "b"}, "long": {"build": "b", "require": "short"}},
        {"s": {"long": ["long"], "short": ["short"]}},
    )
    registry, rec = recording_registry()
    write_outputs_hooks(registry, delay=0.02)
    verdict, *_ = run_memory_suite(store, "s", tmp_path / "out", registry)
    assert verdict.passed
    calls = [(c[0], c[2]) for c in rec.calls]
    assert calls.index((HookName.RUN_PREP, "long")) > calls.index((HookName.OUTFILES, "short"))


@pytest.mark.parametrize("cont, status", [(False, RunStatus.FAILED), (True, RunStatus.SKIPPED)])
def test_require_gated_run_never_starts_after_failure(tmp_path, cont, status):
    suite = {"short": ["short"], "long": ["long"]}
    if cont:
        suite["continue"] = True
    store = memory_store({"short": {"build": "b"}, "long": {"build": "b", "require": "short"}}, {"s": suite})
    registry, rec = recording_registry()
    write_outputs_hooks(registry)
    failing_check(registry, {"short"})
    verdict, *_ = run_memory_suite(store, "s", tmp_path / "out", registry)
    assert verdict.exit_code == 1
    assert rec.count(HookName.RUN_PREP, "long") == 0
    assert verdict.runs["long"].status is status


def test_require_outside_groups_is_still_executed(tmp_path):
    store = memory_store({"pre": {"build": "b"}, "main": {"build": "b", "require": ["pre"]}}, {"s": {"g": ["main"]}})
    registry, rec = recording_registry()
    verdict, *_ = run_memory_suite(store, "s", tmp_path / "out", registry)
    assert verdict.passed and rec.count(HookName.RUN, "pre") == 1


def test_require_cycles_and_dangling(tmp_path):
    store = memory_store({"a": {"build": "b", "require": "b2"}, "b2": {"build": "b", "require": "a"}, "self": {"build": "b", "require": "self"}, "d": {"build": "b", "require": "ghost"}}, {"s": {"g": ["a"]}, "t": {"g": ["self"]}, "u": {"g": ["d"]}})
    with pytest.raises(CycleError):
        plan(store.suite("s"), store)
    with pytest.raises(CycleError):
        plan(store.suite("t"), store)
    with pytest.raises(NotFound):
        plan(store.suite("u"), store)


def test_plan_graph_shape():
    store = memory_store(
        {"r1": {"build": "b1"}, "r2": {"build": "b1"}, "r3": {"build": "b2", "require": "r1"}},
        {"s": {"g1": ["r1", "r2"], "g2": ["r3", "r1"]}},
        builds={"b1": {}, "b2": {}},
    )
    graph = plan(store.suite("s"), store)
    assert set(graph.runs) == {"r1", "r2", "r3"} and set(graph.builds) == {"b1", "b2"}
    assert graph.runs["r1"].groups == ["g1", "g2"]
    edges = set(graph.edges())
    assert {("run:r3", "build:b2"), ("run:r3", "run:r1"), ("group:g2", "run:r3")} <= edges
    single = plan_run("r3", store)
    assert set(single.runs) == {"r1", "r3"} and single.single_run


def test_continue_mode_attempts_everything(tmp_path):
    runs = {n: {"build": "b"} for n in ("ok1", "bad1", "ok2", "bad2")}
    store = memory_store(runs, {"s": {"continue": True, "g1": ["ok1", "bad1"], "g2": ["ok2", "bad2"]}})
    registry, rec = recording_registry()
    write_outputs_hooks(registry)
    failing_check(registry, {"bad1", "bad2"})
    verdict, _, out, err = run_memory_suite(store, "s", tmp_path / "out", registry)
    assert verdict.exit_code == 1
    assert rec.count(HookName.RUN) == 4
    assert "run bad1: failed" in err and "run bad2: failed" in err
    assert rec.count(HookName.QUEUE_DEL_CMD) == 0


def test_fail_fast_cancels_pending_and_withdraws_jobs_once(tmp_path):
    runs = {
        "crash": {"build": "b"},
        "queued1": {"build": "b"},
        "queued2": {"build": "b"},
        "blocked": {"build": "b", "require": "queued1"},
    }
    store = memory_store(runs, {"s": {"g1": ["crash"], "g2": ["queued1", "queued2"], "g3": ["blocked"]}})
    registry, rec = recording_registry()
    both_queued = threading.Barrier(3)

    def run(ctx, payload):
        if ctx.names["run"] == "crash":
            both_queued.wait(5)
            raise RuntimeError("simulated crash")
        both_queued.wait(5)
        return HookResult(payload={"job_handle": f"job-{ctx.names['run']}"})

    def run_post(ctx, payload):
        while not ctx.cancel.wait(0.01):
            pass
        raise Cancelled("stopped")

    registry.register(HookName.RUN, run)
    registry.register(HookName.RUN_POST, run_post)
    deleted = []
    registry.register(HookName.QUEUE_DEL_CMD, lambda ctx, p: deleted.append((ctx.names["run"], p)))
    verdict, *_ = run_memory_suite(store, "s", tmp_path / "out", registry)
    assert verdict.exit_code == 1
    assert sorted(deleted) == [("queued1", "job-queued1"), ("queued2", "job-queued2")]
    assert verdict.runs["crash"].status is RunStatus.FAILED
    assert verdict.runs["blocked"].status is RunStatus.SKIPPED
    assert rec.count(HookName.RUN_PREP, "blocked") == 0
    assert [c[0] for c in rec.calls][-1] is HookName.SUITE_POST


def test_no_queue_delete_when_suite_passes(tmp_path):
    store = memory_store({"a": {"build": "b"}}, {"s": {"g": ["a"]}})
    registry, rec = recording_registry()
    registry.register(HookName.RUN, lambda ctx, p: HookResult(payload={"job_handle": "j"}))
    verdict, *_ = run_memory_suite(store, "s", tmp_path / "out", registry)
    assert verdict.passed and rec.count(HookName.QUEUE_DEL_CMD) == 0


def test_build_failure_fails_dependents_only_in_continue_mode(tmp_path):
    store = memory_store(
        {"x1": {"build": "bad"}, "x2": {"build": "bad"}, "y": {"build": "good"}},
        {"s": {"continue": True, "g1": ["x1", "x2"], "g2": ["y"]}},
        builds={"bad": {}, "good": {}},
    )
    registry, rec = recording_registry()

    def build(ctx, payload):
        if ctx.names["build"] == "bad":
            raise RuntimeError("compiler error")

    registry.register(HookName.BUILD, build)
    verdict, *_ = run_memory_suite(store, "s", tmp_path / "out", registry)
    assert verdict.builds["bad"].status is BuildStatus.FAILED
    assert rec.count(HookName.BUILD) == 2
    assert verdict.runs["x1"].status is RunStatus.FAILED and verdict.runs["x2"].status is RunStatus.FAILED
    assert verdict.groups["g2"].passed and not verdict.groups["g1"].passed
    assert rec.count(HookName.RUN_PREP, "x1") == rec.count(HookName.RUN_PREP, "x2") == 0


def test_data_failure_fails_every_run_and_is_attempted_once(tmp_path):
    store = memory_store({f"r{i}": {"build": "b"} for i in range(4)}, {"s": {"continue": True, "g": [f"r{i}" for i in range(4)]}})
    registry, rec = recording_registry()

    def data(ctx, payload):
        raise RuntimeError("no data")

    registry.register(HookName.DATA, data)
    verdict, *_ = run_memory_suite(store, "s", tmp_path / "out", registry)
    assert rec.count(HookName.DATA) == 1
    assert all(s.status is RunStatus.FAILED for s in verdict.runs.values())


def test_suite_prep_failure_runs_nothing(tmp_path):
    store = memory_store({"a": {"build": "b"}}, {"s": {"g": ["a"]}})
    registry, rec = recording_registry()

    def prep(ctx, payload):
        raise RuntimeError("no scratch space")

    registry.register(HookName.SUITE_PREP, prep)
    verdict, *_ = run_memory_suite(store, "s", tmp_path / "out", registry)
    assert verdict.exit_code == 1
    assert rec.count(HookName.RUN) == 0 and rec.count(HookName.BUILD) == 0
    assert rec.count(HookName.SUITE_POST) == 1


def test_suite_post_failure_fails_suite(tmp_path):
    store = memory_store({"a": {"build": "b"}}, {"s": {"g": ["a"]}})
    registry, _ = recording_registry()

    def post(ctx, payload):
        assert payload["passed"] is True and payload["runs"]["a"]["status"] == "passed"
        raise RuntimeError("cleanup failed")

    registry.register(HookName.SUITE_POST, post)
    verdict, *_ = run_memory_suite(store, "s", tmp_path / "out", registry)
    assert verdict.exit_code == 1 and "suite_post failed" in " ".join(verdict.problems())


def test_build_only_dispatches_no_run_hooks(tmp_path):
    store = memory_store({"r1": {"build": "b"}, "r2": {"build": "c"}}, {"s": {"build_only": True, "g": ["r1", "r2"]}}, builds={"b": {}, "c": {}})
    registry, rec = recording_registry()
    verdict, _, out, _ = run_memory_suite(store, "s", tmp_path / "out", registry)
    assert verdict.passed and out.splitlines()[-1] == "ALL TESTS PASSED"
    assert rec.count(HookName.BUILD) == 2
    for name in RUN_PHASES + [HookName.DATA, HookName.COMP]:
        assert rec.count(name) == 0


def test_retain_builds_reuses_and_default_removes(tmp_path):
    out = tmp_path / "out"
    runs = {"r": {"build": "b"}}
    retain = memory_store(runs, {"s": {"retain_builds": True, "g": ["r"]}}, builds={"b": {"opt": 1}})
    registry, rec = recording_registry()
    run_memory_suite(retain, "s", out, registry)
    assert rec.count(HookName.BUILD) == 1
    marker = out / "builds" / "b" / "artifact"
    marker.write_text("x")
    registry, rec = recording_registry()
    verdict, *_ = run_memory_suite(retain, "s", out, registry)
    assert verdict.passed and rec.count(HookName.BUILD) == 0 and marker.exists()
    assert verdict.builds["b"].reused
    changed = memory_store(runs, {"s": {"retain_builds": True, "g": ["r"]}}, builds={"b": {"opt": 2}})
    registry, rec = recording_registry()
    run_memory_suite(changed, "s", out, registry)
    assert rec.count(HookName.BUILD) == 1
    default = memory_store(runs, {"s": {"g": ["r"]}}, builds={"b": {"opt": 2}})
    registry, rec = recording_registry()
    seen_before_build = []
    registry.register(HookName.BUILD_PREP, lambda ctx, p: seen_before_build.append(marker.exists()))
    run_memory_suite(default, "s", out, registry)
    assert seen_before_build == [False] and rec.count(HookName.BUILD) == 1


def test_workers_cap_limits_concurrent_runs(tmp_path):
    store = memory_store({f"r{i}": {"build": "b"} for i in range(6)}, {"s": {f"g{i}": [f"r{i}"] for i in range(6)}})
    registry, _ = recording_registry()
    active, peak, lock = [0], [0], threading.Lock()

    def run(ctx, payload):
        with lock:
            active[0] += 1
            peak[0] = max(peak[0], active[0])
        time.sleep(0.03)
        with lock:
            active[0] -= 1

    registry.register(HookName.RUN, run)
    verdict, *_ = run_memory_suite(store, "s", tmp_path / "out", registry, Modes(workers=2))
    assert verdict.passed and peak[0] == 2


def test_scratch_isolation_between_runs(tmp_path):
    store = memory_store({"a": {"build": "b"}, "c": {"build": "b"}}, {"s": {"g": ["a", "c"]}})
    registry, _ = recording_registry()
    registry.register(HookName.SUITE_PREP, lambda ctx, p: HookResult(context_patch={"shared": 1}))
    seen = {}

    def run_prep(ctx, payload):
        seen[ctx.names["run"]] = dict(ctx.scratch)
        return HookResult(context_patch={"mine": ctx.names["run"]})

    def run_check(ctx, payload):
        assert ctx.scratch["mine"] == ctx.names["run"]
        return HookResult(ok=True)

    registry.register(HookName.RUN_PREP, run_prep)
    registry.register(HookName.RUN_CHECK, run_check)
    verdict, *_ = run_memory_suite(store, "s", tmp_path / "out", registry)
    assert verdict.passed
    assert seen == {"a": {"shared": 1}, "c": {"shared": 1}}


def test_run_payload_threads_to_run_post(tmp_path):
    store = memory_store({"a": {"build": "b"}}, {"s": {"g": ["a"]}})
    registry, _ = recording_registry()
    token = object()
    got = []
    registry.register(HookName.RUN, lambda ctx, p: HookResult(payload={"token": id(token)}))
    registry.register(HookName.RUN_POST, lambda ctx, p: got.append(p))
    run_memory_suite(store, "s", tmp_path / "out", registry)
    assert got == [{"token": id(token)}]


def test_baseline_modes(tmp_path):
    runs = {"with": {"build": "b", "baseline": "std"}, "without": {"build": "b"}}
    store = memory_store(runs, {"s": {"g1": ["with"], "g2": ["without"]}})
    bl = tmp_path / "bl"
    registry, _ = recording_registry()
    write_outputs_hooks(registry)
    verdict, *_ = run_memory_suite(store, "s", tmp_path / "out", registry, Modes(gen_baseline=bl))
    assert verdict.passed and sorted(p.name for p in bl.iterdir()) == ["std"]
    registry, rec = recording_registry()
    write_outputs_hooks(registry)
    verdict, *_ = run_memory_suite(store, "s", tmp_path / "out", registry, Modes(use_baseline=bl))
    assert verdict.passed
    assert rec.count(HookName.COMP, "without") == 0 and rec.count(HookName.COMP, "with") == 1
    with pytest.raises(DestExists):
        run_memory_suite(store, "s", tmp_path / "out", recording_registry()[0], Modes(gen_baseline=bl))
    registry, _ = recording_registry()
    write_outputs_hooks(registry, {"with": b"changed"})
    verdict, _, _, err = run_memory_suite(store, "s", tmp_path / "out", registry, Modes(use_baseline=bl))
    assert verdict.exit_code == 1 and "out.dat" in err
    empty = tmp_path / "empty"
    empty.mkdir()
    registry, _ = recording_registry()
    write_outputs_hooks(registry)
    verdict, _, _, err = run_memory_suite(store, "s", tmp_path / "out", registry, Modes(use_baseline=empty))
    assert verdict.exit_code == 1 and "not found" in err


def test_internal_fault_gives_exit_3(tmp_path):
    store = memory_store({"a": {"build": "b"}}, {"s": {"g": ["a"]}})
    registry, _ = recording_registry()

    def broken_listener(name, identifier, ctx, payload):
        if name is HookName.RUN:
            raise RuntimeError("framework bug")

    registry.add_listener(broken_listener)
    verdict, *_ = run_memory_suite(store, "s", tmp_path / "out", registry)
    assert verdict.exit_code == 3


def test_unknown_alias_is_rejected_before_running(tmp_path):
    store = memory_store({"a": {"build": "b", "lib_run": "run_nowhere"}}, {"s": {"g": ["a"]}})
    registry, rec = recording_registry()
    with pytest.raises(UnknownHook):
        run_memory_suite(store, "s", tmp_path / "out", registry)
    assert rec.calls == [] and not (tmp_path / "out").exists()


def test_single_run_mode(tmp_path):
    store = memory_store({"pre": {"build": "b"}, "main": {"build": "b", "require": "pre"}}, {})
    registry, rec = recording_registry()
    verdict, _, out, _ = run_memory_suite(store, "main", tmp_path / "out", registry, single_run=True)
    assert verdict.passed and out.splitlines()[-1] == "ALL TESTS PASSED"
    assert rec.count(HookName.RUN) == 2 and rec.count(HookName.COMP) == 0


def test_verdicts_are_deterministic(tmp_path):
    runs = {n: {"build": "b"} for n in ("a", "a2", "p", "crash", "s1")}
    runs["late"] = {"build": "b", "require": "crash"}
    store = memory_store(runs, {"s": {"continue": True, "g1": ["a", "a2", "p"], "g2": ["crash", "late"], "g3": ["s1"]}})
    outcomes = set()
    for i in range(20):
        registry, _ = recording_registry()
        write_outputs_hooks(registry, {"p": b"other"}, delay=0.003)
        failing_check(registry, {"crash"})
        verdict, *_ = run_memory_suite(store, "s", tmp_path / f"o{i}", registry)
        outcomes.add(
            (
                verdict.exit_code,
                tuple(sorted((n, s.status.value) for n, s in verdict.runs.items())),
                tuple(sorted((n, g.passed) for n, g in verdict.groups.items())),
            )
        )
    assert len(outcomes) == 1
    (code, statuses, groups), = outcomes
    assert code == 1 and dict(groups) == {"g1": False, "g2": False, "g3": True}
    assert dict(statuses)["late"] == "skipped"
