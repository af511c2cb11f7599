"""Loading, composing, validating and displaying definition files.

An application root holds three flat directories, ``builds/``, ``runs/`` and
``suites/``.  Each file in them is one definition, named by its pathless
filename.  A definition may name a same-kind ancestor under ``extends``; the
composed body is the fully resolved ancestor overlaid with the child's keys.
"""

from __future__ import annotations

import copy
import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from . import syntax
from .errors import BadRun, BadSuite, CycleError, DefinitionError, NotFound, ParseError

EXTENDS = "extends"
SUITE_OPTION_KEYS = ("build_only", "continue", "retain_builds")
RESERVED_SUITE_KEYS = frozenset((EXTENDS,) + SUITE_OPTION_KEYS)


class DefinitionKind(str, enum.Enum):
    BUILD = "build"
    RUN = "run"
    SUITE = "suite"

    @property
    def plural(self) -> str:
        return self.value + "s"

    @classmethod
    def parse(cls, text: str) -> "DefinitionKind":
        for kind in cls:
            if text in (kind.value, kind.plural):
                return kind
        raise DefinitionError(f"unknown definition kind '{text}'")

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class RawDefinition:
    name: str
    kind: DefinitionKind
    body: dict[str, Any]
    source_path: Path | None = None


@dataclass(frozen=True)
class ResolvedDefinition:
    name: str
    kind: DefinitionKind
    body: dict[str, Any]
    ancestry: tuple[str, ...]


@dataclass(frozen=True)
class SuiteOptions:
    build_only: bool = False
    continue_on_error: bool = False
    retain_builds: bool = False


@dataclass(frozen=True)
class SuiteModel:
    name: str
    groups: dict[str, list[str]]
    options: SuiteOptions = field(default_factory=SuiteOptions)
    body: dict[str, Any] = field(default_factory=dict)


def check_name(name: str) -> str:
    if not isinstance(name, str) or not name or "/" in name or "\\" in name or name in (".", ".."):
        raise DefinitionError(f"invalid definition name {name!r}: must be a pathless filename")
    return name


def merge(base: Mapping[str, Any], overlay: Mapping[str, Any]) -> dict[str, Any]:
    """Overlay ``overlay`` on ``base``.

    Nested mappings merge key by key; lists and scalars from ``overlay``
    replace whatever ``base`` held.  Neither input is modified.
    """
    out = copy.deepcopy(dict(base))
    for key, value in overlay.items():
        if isinstance(value, Mapping) and isinstance(out.get(key), Mapping):
            out[key] = merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def parse_body(text: str, path: object = "<string>") -> dict[str, Any]:
    try:
        data = syntax.loads(text)
    except syntax.SyntaxProblem as exc:
        raise ParseError(path, exc.line, exc.problem) from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ParseError(path, 1, "a definition must be a mapping of keys to values")
    return data


class DefinitionStore:
    """Read-only view of the definitions under an application root.

    Loaded and resolved definitions are cached; the store is safe to share
    between threads once populated because cached values are never mutated
    in place (callers receive deep copies).
    """

    def __init__(self, app_root: Path | str) -> None:
        self.app_root = Path(app_root)
        self._raw: dict[tuple[DefinitionKind, str], RawDefinition] = {}
        self._resolved: dict[tuple[DefinitionKind, str], ResolvedDefinition] = {}

    def path_for(self, kind: DefinitionKind, name: str) -> Path:
        return self.app_root / DefinitionKind(kind).plural / check_name(name)

    def _read(self, kind: DefinitionKind, name: str) -> RawDefinition:
        path = self.path_for(kind, name)
        if not path.is_file():
            raise NotFound(kind, name, str(path))
        try:
            text = path.read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as exc:
            raise ParseError(path, None, f"unreadable: {exc}") from exc
        return RawDefinition(name, kind, parse_body(text, path), path)

    def load(self, kind: DefinitionKind | str, name: str) -> RawDefinition:
        kind = DefinitionKind(kind)
        key = (kind, name)
        if key not in self._raw:
            self._raw[key] = self._read(kind, name)
        raw = self._raw[key]
        return RawDefinition(raw.name, raw.kind, copy.deepcopy(raw.body), raw.source_path)

    def names(self, kind: DefinitionKind | str) -> list[str]:
        directory = self.app_root / DefinitionKind(kind).plural
        if not directory.is_dir():
            return []
        return sorted(
            p.name for p in directory.iterdir() if p.is_file() and not p.name.startswith(".")
        )

    def resolve(self, kind: DefinitionKind | str, name: str) -> ResolvedDefinition:
        kind = DefinitionKind(kind)
        key = (kind, name)
        if key not in self._resolved:
            self._resolved[key] = self._compose(kind, name)
        res = self._resolved[key]
        return ResolvedDefinition(res.name, res.kind, copy.deepcopy(res.body), res.ancestry)

    def _compose(self, kind: DefinitionKind, name: str) -> ResolvedDefinition:
        chain: list[RawDefinition] = []
        seen: list[str] = []
        current = name
        while True:
            if current in seen:
                raise CycleError(seen[seen.index(current):])
            seen.append(current)
            try:
                raw = self.load(kind, current)
            except NotFound as exc:
                if chain:
                    raise NotFound(kind, current, f"ancestor of '{chain[-1].name}'") from exc
                raise
            chain.append(raw)
            parent = raw.body.get(EXTENDS)
            if parent is None:
                break
            if not isinstance(parent, str):
                raise DefinitionError(
                    f"{kind} '{current}': extends must name one {kind} definition"
                )
            current = parent
        body: dict[str, Any] = {}
        for raw in reversed(chain):
            own = {k: v for k, v in raw.body.items() if k != EXTENDS}
            body = merge(body, own)
        return ResolvedDefinition(name, kind, body, tuple(seen))

    def show(self, kind: DefinitionKind | str, name: str) -> str:
        return render(self.resolve(kind, name))

    def suite(self, name: str) -> SuiteModel:
        return build_suite_model(self.resolve(DefinitionKind.SUITE, name), self)

    def run(self, name: str) -> ResolvedDefinition:
        """Resolve a run definition that an invocation is about to use."""
        resolved = self.resolve(DefinitionKind.RUN, name)
        build = resolved.body.get("build")
        if build is None:
            raise BadRun(f"run '{name}' has no build key")
        if not isinstance(build, str):
            raise BadRun(f"run '{name}': build must name one build definition")
        self.resolve(DefinitionKind.BUILD, build)
        baseline = resolved.body.get("baseline")
        if baseline is not None:
            if not isinstance(baseline, str):
                raise BadRun(f"run '{name}': baseline must be a name")
            check_name(baseline)
        return resolved


class MemoryStore(DefinitionStore):
    """A store fed from an in-memory mapping ``{(kind, name): body}``."""

    def __init__(self, bodies: Mapping[tuple[str, str], Mapping[str, Any]], app_root: Path | str = ".") -> None:
        super().__init__(app_root)
        self._bodies = {(DefinitionKind(k), n): dict(b) for (k, n), b in bodies.items()}

    def _read(self, kind: DefinitionKind, name: str) -> RawDefinition:
        check_name(name)
        if (kind, name) not in self._bodies:
            raise NotFound(kind, name)
        return RawDefinition(name, kind, copy.deepcopy(self._bodies[(kind, name)]))

    def names(self, kind: DefinitionKind | str) -> list[str]:
        return sorted(n for k, n in self._bodies if k == DefinitionKind(kind))


def load_definition(kind: DefinitionKind | str, name: str, app_root: Path | str) -> RawDefinition:
    return DefinitionStore(app_root).load(kind, name)


def resolve(kind: DefinitionKind | str, name: str, store: DefinitionStore) -> ResolvedDefinition:
    return store.resolve(kind, name)


def render(resolved: ResolvedDefinition) -> str:
    header = "# " + " < ".join(resolved.ancestry)
    body = syntax.dump(resolved.body, sort_keys=True) if resolved.body else ""
    return f"{header}\n\n{body}"


def show(kind: DefinitionKind | str, name: str, store: DefinitionStore) -> str:
    return store.show(kind, name)


def parse_show_output(text: str) -> tuple[list[str], dict[str, Any]]:
    """Split ``show`` output back into (ancestry, body)."""
    header, _, rest = text.partition("\n")
    if not header.startswith("# "):
        raise DefinitionError("show output lacks an ancestry line")
    return header[2:].split(" < "), parse_body(rest)


def _is_hook_alias_key(key: str) -> bool:
    from .hooks import HookName

    return key in HookName.definition_keys()


def build_suite_model(resolved: ResolvedDefinition, store: DefinitionStore | None = None) -> SuiteModel:
    if resolved.kind is not DefinitionKind.SUITE:
        raise BadSuite(None, f"'{resolved.name}' is a {resolved.kind} definition, not a suite")
    groups: dict[str, list[str]] = {}
    flags = {key: False for key in SUITE_OPTION_KEYS}
    for key, value in resolved.body.items():
        if key in RESERVED_SUITE_KEYS:
            if not isinstance(value, bool):
                raise BadSuite(key, f"suite '{resolved.name}': {key} must be true or false")
            flags[key] = value
        elif _is_hook_alias_key(key):
            if not isinstance(value, str):
                raise BadSuite(key, f"suite '{resolved.name}': {key} must name a hook")
        elif isinstance(value, list):
            if not value:
                raise BadSuite(key, f"suite '{resolved.name}': group {key} lists no runs")
            if not all(isinstance(v, str) for v in value):
                raise BadSuite(key, f"suite '{resolved.name}': group {key} must list run names")
            if len(set(value)) != len(value):
                raise BadSuite(key, f"suite '{resolved.name}': group {key} lists a run twice")
            groups[key] = list(value)
        else:
            raise BadSuite(key, f"suite '{resolved.name}': group {key} must be a list of runs")
    if not groups:
        raise BadSuite(None, f"suite '{resolved.name}' defines no comparison groups")
    if store is not None:
        for runs in groups.values():
            for run in runs:
                store.run(run)
    options = SuiteOptions(
        build_only=flags["build_only"],
        continue_on_error=flags["continue"],
        retain_builds=flags["retain_builds"],
    )
    return SuiteModel(resolved.name, groups, options, resolved.body)
