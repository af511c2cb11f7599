"""Screen progress and the per-invocation log file.

Every event goes to the log as ``<ISO-8601> <LEVEL> [<scope>] <text>``.
Events flagged for the screen are additionally written, as bare text, to
standard output (errors to standard error), so each screen line is a suffix
of some log line.
"""

from __future__ import annotations

import datetime as _dt
import itertools
import logging
import sys
import threading
from pathlib import Path
from typing import IO, Iterable, Protocol

__all__ = ["Reporter", "LogWriteError", "unique_log_path", "PASS_LINE"]

PASS_LINE = "ALL TESTS PASSED"

_LEVELS = {"debug": logging.DEBUG, "info": logging.INFO, "warn": logging.WARNING, "error": logging.ERROR}
_LEVEL_NAMES = {logging.DEBUG: "DEBUG", logging.INFO: "INFO", logging.WARNING: "WARN", logging.ERROR: "ERROR"}
_ids = itertools.count()


class LogWriteError(RuntimeError):
    pass


class Verdict(Protocol):
    passed: bool

    def problems(self) -> list[str]: ...


def _utc_stamp() -> str:
    return _dt.datetime.now(_dt.timezone.utc).strftime("%Y%m%dT%H%M%SZ")


def unique_log_path(log_dir: Path, name: str) -> tuple[Path, str]:
    """Create a fresh, empty log file and return it with its invocation id.

    Uniqueness holds across processes: the file is created exclusively and
    the counter advances past names already taken.
    """
    log_dir.mkdir(parents=True, exist_ok=True)
    stamp = _utc_stamp()
    counter = 0
    while True:
        invocation_id = f"{stamp}.{counter}"
        path = log_dir / f"{name}.{invocation_id}.log"
        try:
            with open(path, "x", encoding="utf-8"):
                pass
        except FileExistsError:
            counter += 1
            continue
        return path, invocation_id


class _LogFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        when = _dt.datetime.fromtimestamp(record.created, _dt.timezone.utc)
        stamp = when.isoformat(timespec="milliseconds").replace("+00:00", "Z")
        level = _LEVEL_NAMES.get(record.levelno, record.levelname)
        return f"{stamp} {level} [{record.scope}] {record.getMessage()}"


class _ScreenFilter(logging.Filter):
    def __init__(self, errors: bool) -> None:
        super().__init__()
        self.errors = errors

    def filter(self, record: logging.LogRecord) -> bool:
        if not getattr(record, "screen", False):
            return False
        return (record.levelno >= logging.ERROR) == self.errors


class _StrictFileHandler(logging.FileHandler):
    def handleError(self, record: logging.LogRecord) -> None:
        exc = sys.exc_info()[1]
        raise LogWriteError(f"cannot write log {self.baseFilename}: {exc}") from exc


class Reporter:
    """Thread-safe sink for progress and diagnostic events."""

    def __init__(
        self,
        log_path: Path | str,
        invocation_id: str | None = None,
        stdout: IO[str] | None = None,
        stderr: IO[str] | None = None,
    ) -> None:
        self.log_path = Path(log_path).resolve()
        self.invocation_id = invocation_id or f"{_utc_stamp()}.{next(_ids)}"
        self._logger = logging.Logger(f"ddts.{self.invocation_id}.{id(self)}", logging.DEBUG)
        self._logger.propagate = False
        self._file = _StrictFileHandler(self.log_path, mode="a", encoding="utf-8")
        self._file.setFormatter(_LogFormatter())
        self._logger.addHandler(self._file)
        plain = logging.Formatter("%(message)s")
        for stream, errors in ((stdout or sys.stdout, False), (stderr or sys.stderr, True)):
            handler = logging.StreamHandler(stream)
            handler.setFormatter(plain)
            handler.addFilter(_ScreenFilter(errors))
            self._logger.addHandler(handler)
        self._closed = False
        self._lock = threading.Lock()
        self.finalized = False

    @classmethod
    def create(cls, out_root: Path | str, name: str, **kwargs) -> "Reporter":
        path, invocation_id = unique_log_path(Path(out_root) / "logs", name)
        return cls(path, invocation_id, **kwargs)

    def emit(self, level: str, scope: str, text: str, to_screen: bool = False) -> None:
        levelno = _LEVELS[level]
        lines = str(text).splitlines() or [""]
        for line in lines:
            self._logger.log(levelno, "%s", line, extra={"scope": scope, "screen": to_screen})

    def info(self, scope: str, text: str, to_screen: bool = True) -> None:
        self.emit("info", scope, text, to_screen)

    def warn(self, scope: str, text: str, to_screen: bool = True) -> None:
        self.emit("warn", scope, text, to_screen)

    def error(self, scope: str, text: str, to_screen: bool = True) -> None:
        self.emit("error", scope, text, to_screen)

    def debug(self, scope: str, text: str) -> None:
        self.emit("debug", scope, text, False)

    def finalize(self, verdict: Verdict, scope: str = "suite") -> None:
        with self._lock:
            if self.finalized:
                return
            self.finalized = True
        if verdict.passed:
            self.info(scope, PASS_LINE)
            return
        problems = verdict.problems()
        for line in problems:
            self.error(scope, line)
        self.info(scope, f"TESTS FAILED: {len(problems)} problem(s), see {self.log_path}")

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        for handler in list(self._logger.handlers):
            handler.flush()
            handler.close()
            self._logger.removeHandler(handler)


def screen_lines_in_log(screen: Iterable[str], log_text: str) -> list[str]:
    """Return screen lines that no log line ends with (empty means superset holds)."""
    log_lines = log_text.splitlines()
    suffixes = {line.split("] ", 1)[1] if "] " in line else line for line in log_lines}
    return [line for line in screen if line and line not in suffixes]
