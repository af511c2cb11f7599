"""Lifecycle hooks binding the framework to a program-under-test.

Thirteen canonical hooks exist.  Each is addressed by an identifier, which for
canonical hooks is ``lib_<name>`` (``lib_run``, ``lib_comp``...).  A
definition may carry a key equal to a canonical identifier; its value names a
substitute identifier to call instead (``lib_run: run_batch``).

An identifier is served, in order of precedence, by an in-process
registration, by an executable ``<app_root>/hooks/<identifier>``, or (for
canonical identifiers only) by a packaged stub.

External executables speak a small protocol.  Standard input carries a
document ``{hook, identifier, context, payload}``; standard output must be
empty or a mapping with any of ``payload``, ``context_patch`` and ``ok``;
standard error goes to the invocation log line by line; a nonzero exit
status is a failure.
"""

from __future__ import annotations

import copy
import enum
import os
import signal
import subprocess
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path, PurePosixPath
from typing import TYPE_CHECKING, Any, Callable, Iterable, Mapping

from . import syntax
from .compare import bitwise_compare
from .errors import Cancelled, DuplicateHook, HookFailure, UnknownHook

if TYPE_CHECKING:
    from .report import Reporter

__all__ = [
    "HookName",
    "HookContext",
    "HookResult",
    "HookRegistry",
    "parse_outfiles",
    "run_external",
    "STUBS",
]


class HookName(str, enum.Enum):
    SUITE_PREP = "suite_prep"
    BUILD_PREP = "build_prep"
    BUILD = "build"
    BUILD_POST = "build_post"
    DATA = "data"
    RUN_PREP = "run_prep"
    RUN = "run"
    RUN_POST = "run_post"
    RUN_CHECK = "run_check"
    OUTFILES = "outfiles"
    COMP = "comp"
    SUITE_POST = "suite_post"
    QUEUE_DEL_CMD = "queue_del_cmd"

    @property
    def identifier(self) -> str:
        return "lib_" + self.value

    @classmethod
    def definition_keys(cls) -> frozenset[str]:
        return frozenset(h.identifier for h in cls)

    @classmethod
    def from_identifier(cls, identifier: str) -> "HookName | None":
        if identifier.startswith("lib_"):
            try:
                return cls(identifier[4:])
            except ValueError:
                return None
        return None

    def __str__(self) -> str:
        return self.value


@dataclass
class HookResult:
    payload: Any = None
    context_patch: dict[str, Any] = field(default_factory=dict)
    ok: bool = True


@dataclass
class HookContext:
    """The ``env`` structure handed to every hook.

    ``suite``, ``run`` and ``build`` hold composed definition bodies for the
    phase being executed; ``names`` says which definitions those are.
    ``scratch`` is free-form and receives each hook's ``context_patch``.  The
    fields after ``names`` are runtime plumbing and are not serialized for
    external hooks.
    """

    suite: dict[str, Any] | None = None
    run: dict[str, Any] | None = None
    build: dict[str, Any] | None = None
    scratch: dict[str, Any] = field(default_factory=dict)
    paths: dict[str, str] = field(default_factory=dict)
    names: dict[str, str] = field(default_factory=dict)
    scope: str = "suite"
    reporter: "Reporter | None" = field(default=None, repr=False, compare=False)
    cancel: threading.Event | None = field(default=None, repr=False, compare=False)
    timeout: float | None = None

    def child(self, **changes: Any) -> "HookContext":
        """Copy with an independent scratch area (copy-on-entry)."""
        fields = dict(
            suite=self.suite,
            run=self.run,
            build=self.build,
            scratch=copy.deepcopy(self.scratch),
            paths=dict(self.paths),
            names=dict(self.names),
            scope=self.scope,
            reporter=self.reporter,
            cancel=self.cancel,
            timeout=self.timeout,
        )
        fields.update(changes)
        return HookContext(**fields)

    def log(self, text: str, to_screen: bool = False, level: str | None = None) -> None:
        if self.reporter is None:
            return
        self.reporter.emit(level or ("info" if to_screen else "debug"), self.scope, text, to_screen)

    def to_document(self) -> dict[str, Any]:
        return {
            "suite": self.suite,
            "run": self.run,
            "build": self.build,
            "scratch": self.scratch,
            "paths": self.paths,
            "names": self.names,
        }


HookImpl = Callable[[HookContext, Any], "HookResult | None"]


def parse_outfiles(payload: Any) -> list[tuple[Path, str]]:
    """Validate an outfiles payload into ``(root, relpath)`` pairs.

    Entries are ``{root, relpath}`` mappings or two-item sequences.  Relative
    paths must be unique, stay inside their root, and name existing files.
    """
    if payload is None:
        return []
    if not isinstance(payload, (list, tuple)):
        raise HookFailure("outfiles", f"expected a list of output files, got {type(payload).__name__}")
    entries: list[tuple[Path, str]] = []
    seen: set[str] = set()
    for item in payload:
        if isinstance(item, Mapping):
            root, rel = item.get("root"), item.get("relpath")
        elif isinstance(item, (list, tuple)) and len(item) == 2:
            root, rel = item
        else:
            raise HookFailure("outfiles", f"malformed entry {item!r}")
        if not isinstance(root, (str, os.PathLike)) or not isinstance(rel, (str, os.PathLike)):
            raise HookFailure("outfiles", f"malformed entry {item!r}")
        relpath = PurePosixPath(Path(rel).as_posix())
        if relpath.is_absolute() or ".." in relpath.parts or str(relpath) in ("", "."):
            raise HookFailure("outfiles", f"relpath {rel} must be relative to its root")
        key = relpath.as_posix()
        if key in seen:
            raise HookFailure("outfiles", f"relpath {key} listed twice")
        seen.add(key)
        if not (Path(root) / key).is_file():
            raise HookFailure("outfiles", f"output file {Path(root) / key} does not exist")
        entries.append((Path(root), key))
    return entries


# Packaged defaults: correct, and useless enough that an empty
# application passes vacuously.

def _ensure_dir(ctx: HookContext, key: str) -> HookResult:
    path = ctx.paths.get(key)
    if path:
        Path(path).mkdir(parents=True, exist_ok=True)
    return HookResult(payload=path)


def _nothing(ctx: HookContext, payload: Any) -> HookResult:
    return HookResult()


def _passthrough(ctx: HookContext, payload: Any) -> HookResult:
    return HookResult(payload=payload)


def _default_comp(ctx: HookContext, payload: Any) -> HookResult:
    return HookResult(ok=bitwise_compare(payload["left"], payload["right"]))


STUBS: dict[HookName, HookImpl] = {
    HookName.SUITE_PREP: _nothing,
    HookName.BUILD_PREP: lambda ctx, payload: _ensure_dir(ctx, "build_dir"),
    HookName.BUILD: _passthrough,
    HookName.BUILD_POST: _passthrough,
    HookName.DATA: _nothing,
    HookName.RUN_PREP: lambda ctx, payload: _ensure_dir(ctx, "run_dir"),
    HookName.RUN: _passthrough,
    HookName.RUN_POST: _passthrough,
    HookName.RUN_CHECK: lambda ctx, payload: HookResult(payload=payload, ok=True),
    HookName.OUTFILES: lambda ctx, payload: HookResult(payload=[]),
    HookName.COMP: _default_comp,
    HookName.SUITE_POST: _nothing,
    HookName.QUEUE_DEL_CMD: _nothing,
}


def _kill_tree(proc: subprocess.Popen) -> None:
    try:
        os.killpg(proc.pid, signal.SIGKILL)
    except (ProcessLookupError, PermissionError):
        pass
    try:
        proc.communicate(timeout=5)
    except (subprocess.TimeoutExpired, ValueError, OSError):
        proc.kill()


def _response(identifier: str, stdout: str, stderr: str) -> HookResult:
    try:
        doc = syntax.loads(stdout) if stdout.strip() else {}
    except syntax.SyntaxProblem as exc:
        raise HookFailure(identifier, f"malformed response ({exc}): {stdout[-500:]!r}") from exc
    if doc is None:
        doc = {}
    if not isinstance(doc, dict) or set(doc) - {"payload", "context_patch", "ok"}:
        raise HookFailure(identifier, f"malformed response: {stdout[-500:]!r}")
    patch = doc.get("context_patch") or {}
    ok = doc.get("ok", True)
    if not isinstance(patch, dict) or not isinstance(ok, bool):
        raise HookFailure(identifier, f"malformed response: {stdout[-500:]!r}")
    return HookResult(payload=doc.get("payload"), context_patch=patch, ok=ok)


def run_external(
    path: Path,
    identifier: str,
    name: HookName,
    ctx: HookContext,
    payload: Any,
) -> HookResult:
    """Run one external hook executable under the wire protocol."""
    try:
        document = syntax.dump(
            {"hook": name.value, "identifier": identifier, "context": ctx.to_document(), "payload": payload},
            sort_keys=False,
        )
    except Exception as exc:
        raise HookFailure(identifier, f"context or payload not serializable: {exc}") from exc
    env = dict(os.environ, DDTS_HOOK=name.value, DDTS_HOOK_ID=identifier)
    try:
        proc = subprocess.Popen(
            [str(path)],
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            text=True,
            env=env,
            start_new_session=True,
        )
    except OSError as exc:
        raise HookFailure(identifier, f"cannot execute {path}: {exc}") from exc
    deadline = None if ctx.timeout is None else time.monotonic() + ctx.timeout
    feed: str | None = document
    while True:
        try:
            stdout, stderr = proc.communicate(feed, timeout=0.05)
            break
        except subprocess.TimeoutExpired:
            feed = None
            if ctx.cancel is not None and ctx.cancel.is_set():
                _kill_tree(proc)
                raise Cancelled(f"{identifier} terminated: suite cancelled")
            if deadline is not None and time.monotonic() > deadline:
                _kill_tree(proc)
                raise HookFailure(identifier, f"timed out after {ctx.timeout:g}s")
    for line in stderr.splitlines():
        ctx.log(line)
    if proc.returncode != 0:
        tail = stderr.strip().splitlines()[-1:] or [""]
        raise HookFailure(identifier, f"exit status {proc.returncode} {tail[0]}".rstrip())
    return _response(identifier, stdout, stderr)


Listener = Callable[[HookName, str, HookContext, Any], None]


class HookRegistry:
    """Maps hook identifiers to implementations and dispatches calls.

    Populate it (``register``, ``add_listener``) before execution starts;
    afterwards it is only read and may be shared by any number of workers.
    """

    def __init__(self, app_root: Path | str | None = None) -> None:
        self.app_root = Path(app_root) if app_root is not None else None
        self._impls: dict[str, HookImpl] = {}
        self._listeners: list[Listener] = []

    @staticmethod
    def _key(name: HookName | str) -> str:
        return name.identifier if isinstance(name, HookName) else str(name)

    def register(self, name: HookName | str, impl: HookImpl) -> "HookRegistry":
        key = self._key(name)
        if key in self._impls:
            raise DuplicateHook(key)
        self._impls[key] = impl
        return self

    def add_listener(self, listener: Listener) -> None:
        """Call ``listener(name, identifier, ctx, payload)`` before each dispatch."""
        self._listeners.append(listener)

    def executable(self, identifier: str) -> Path | None:
        if self.app_root is None or "/" in identifier:
            return None
        path = self.app_root / "hooks" / identifier
        if path.is_file() and os.access(path, os.X_OK):
            return path
        return None

    def resolve_alias(self, name: HookName | str, ctx: HookContext) -> str:
        canonical = HookName(name).identifier
        for scope in (ctx.run, ctx.build, ctx.suite):
            if scope and canonical in scope:
                return str(scope[canonical])
        return canonical

    def lookup(self, identifier: str, name: HookName) -> HookImpl:
        if identifier in self._impls:
            return self._impls[identifier]
        path = self.executable(identifier)
        if path is not None:
            return lambda ctx, payload: run_external(path, identifier, name, ctx, payload)
        canonical = HookName.from_identifier(identifier)
        if canonical is not None:
            return STUBS[canonical]
        raise UnknownHook(identifier)

    def check_aliases(self, bodies: "Iterable[Mapping[str, Any] | None]") -> None:
        """Raise UnknownHook for any alias target no implementation serves."""
        keys = HookName.definition_keys()
        for body in bodies:
            for key, value in (body or {}).items():
                if key in keys:
                    self.lookup(str(value), HookName.from_identifier(key))

    def dispatch(self, name: HookName | str, ctx: HookContext, payload: Any = None) -> HookResult:
        name = HookName(name)
        identifier = self.resolve_alias(name, ctx)
        impl = self.lookup(identifier, name)
        for listener in self._listeners:
            listener(name, identifier, ctx, payload)
        label = name.value if identifier == name.identifier else f"{name.value} as {identifier}"
        ctx.log(f"hook {label} start")
        try:
            result = impl(ctx, payload)
        except (HookFailure, Cancelled) as exc:
            ctx.log(f"hook {label} failed: {exc}", level="debug")
            raise
        except Exception as exc:
            ctx.log(f"hook {label} raised {exc!r}", level="debug")
            raise HookFailure(identifier, f"{type(exc).__name__}: {exc}") from exc
        if result is None:
            result = HookResult()
        elif not isinstance(result, HookResult):
            raise HookFailure(identifier, f"returned {type(result).__name__}, expected HookResult")
        if result.context_patch:
            ctx.scratch.update(result.context_patch)
        ctx.log(f"hook {label} end" + ("" if result.ok else " (not ok)"))
        return result
