"""Exception hierarchy shared across the framework.

Errors that stem from the user's definitions or command line derive from
:class:`ConfigError` and map to exit code 2.  Test failures are never raised;
they are captured in verdicts.
"""

from __future__ import annotations


class DDTSError(Exception):
    """Base class for every framework error."""


class ConfigError(DDTSError):
    """A definition, a command line, or an output location is unusable."""


class DefinitionError(ConfigError):
    pass


class NotFound(DefinitionError):
    def __init__(self, kind: str, name: str, detail: str = "") -> None:
        self.kind = str(kind)
        self.name = name
        msg = f"{self.kind} definition '{name}' not found"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class ParseError(DefinitionError):
    def __init__(self, path: object, line: int | None, problem: str) -> None:
        self.path = path
        self.line = line
        self.problem = problem
        where = f"{path}:{line}" if line is not None else f"{path}"
        super().__init__(f"{where}: {problem}")


class CycleError(DefinitionError):
    def __init__(self, names: list[str], what: str = "extends") -> None:
        self.names = list(names)
        chain = " -> ".join(self.names + self.names[:1])
        super().__init__(f"cycle in {what} chain: {chain}")


class BadSuite(DefinitionError):
    def __init__(self, key: str | None, problem: str) -> None:
        self.key = key
        super().__init__(problem)


class BadRun(DefinitionError):
    pass


class UsageError(ConfigError):
    pass


class DestExists(ConfigError):
    def __init__(self, name: str, path: object) -> None:
        self.name = name
        self.path = path
        super().__init__(
            f"baseline '{name}' already exists at {path} (use --force-baseline to overwrite)"
        )


class HookError(DDTSError):
    pass


class DuplicateHook(HookError):
    def __init__(self, identifier: str) -> None:
        self.identifier = identifier
        super().__init__(f"hook '{identifier}' is already registered")


class UnknownHook(HookError, ConfigError):
    def __init__(self, identifier: str) -> None:
        self.identifier = identifier
        super().__init__(f"no implementation found for hook '{identifier}'")


class HookFailure(HookError):
    def __init__(self, name: str, detail: str) -> None:
        self.name = name
        self.detail = detail
        super().__init__(f"{name} failed: {detail}")


class Cancelled(HookError):
    """Raised inside a worker when the suite has been cancelled."""


class BuildFailed(DDTSError):
    def __init__(self, build: str, reason: str) -> None:
        self.build = build
        self.reason = reason
        super().__init__(f"build {build} failed: {reason}")


class DataFailed(DDTSError):
    def __init__(self, reason: str) -> None:
        self.reason = reason
        super().__init__(f"data provisioning failed: {reason}")


class BaselineMissing(DDTSError):
    def __init__(self, name: str, path: object) -> None:
        self.name = name
        self.path = path
        super().__init__(f"baseline '{name}' not found at {path}")
